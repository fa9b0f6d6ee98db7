"""Differentiable primitive operations.

Each primitive computes its result with numpy and, when a tape is active,
records a closure computing the vector-Jacobian product. Closures capture the
forward arrays they need; nothing here mutates its inputs. Non-differentiable
selections (gather indices, max routing) are captured as constants of the
forward pass.
"""

from __future__ import annotations

import math

import numpy as np

from .tape import active_tape
from .tensor import ShapeError, Tensor


def _emit(inputs: tuple, out_data: np.ndarray, vjp) -> Tensor:
    out = Tensor.wrap(out_data)
    tape = active_tape()
    if tape is not None:
        tape.record(inputs, out, vjp)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# linear algebra


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x:[N,Cin], w:[Cin,Cout], b:[Cout]."""
    xd, wd, bd = x.data, w.data, b.data
    if (
        xd.ndim != 2
        or wd.ndim != 2
        or xd.shape[1] != wd.shape[0]
        or bd.shape != (wd.shape[1],)
    ):
        raise ShapeError(
            f"affine: incompatible shapes x{xd.shape}, w{wd.shape}, b{bd.shape}"
        )
    out = xd @ wd + bd

    def vjp(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _emit((x, w, b), out, vjp)


def row_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(row L2 norm, eps)."""
    if eps <= 0:
        raise ValueError(f"row_normalize: eps must be positive, got {eps}")
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"row_normalize: expected 2-D input, got shape {xd.shape}")
    norms = np.sqrt((xd * xd).sum(axis=1))
    denom = np.maximum(norms, eps)
    scale = (1.0 / denom)[:, None]
    y = xd * scale
    live = (norms > eps)[:, None]  # rows below eps have constant denominator

    def vjp(g):
        rowdot = (g * y).sum(axis=1, keepdims=True)
        return ((g - live * y * rowdot) * scale,)

    return _emit((x,), y, vjp)


# ---------------------------------------------------------------------------
# elementwise


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "add")

    def vjp(g):
        return g, g

    return _emit((x, y), x.data + y.data, vjp)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "sub")

    def vjp(g):
        return g, -g

    return _emit((x, y), x.data - y.data, vjp)


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "mul")
    xd, yd = x.data, y.data

    def vjp(g):
        return g * yd, g * xd

    return _emit((x, y), xd * yd, vjp)


def smul(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _emit((x,), x.data * c, vjp)


def add_const(x: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g,)

    return _emit((x,), x.data + float(c), vjp)


def rsub_const(c: float, x: Tensor) -> Tensor:
    """c - x."""

    def vjp(g):
        return (-g,)

    return _emit((x,), float(c) - x.data, vjp)


def log(x: Tensor) -> Tensor:
    xd = x.data

    def vjp(g):
        return (g / xd,)

    return _emit((x,), np.log(xd), vjp)


def pow_const(x: Tensor, p: float) -> Tensor:
    """x ** p for constant p > 0; inputs must be nonnegative."""
    p = float(p)
    if p <= 0:
        raise ValueError(f"pow_const: exponent must be positive, got {p}")
    xd = x.data
    out = xd**p

    def vjp(g):
        # zero subgradient at x == 0 when p < 1 would otherwise blow up
        d = np.where(xd > 0, p * xd ** (p - 1.0), 1.0 if p == 1.0 else 0.0)
        return (g * d,)

    return _emit((x,), out, vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd > lo) & (xd < hi)

    def vjp(g):
        return (g * inside,)

    return _emit((x,), np.clip(xd, lo, hi), vjp)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    xd = x.data
    above = xd > lo

    def vjp(g):
        return (g * above,)

    return _emit((x,), np.maximum(xd, lo), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _emit((x,), s, vjp)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * (xd + _GELU_A * (x2 * xd)))

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _emit((x,), 0.5 * xd * (1.0 + t), vjp)


# ---------------------------------------------------------------------------
# shape manipulation


def concat_last_dim(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_last_dim: need at least one tensor")
    lead = xs[0].shape[:-1]
    for t in xs:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last_dim: leading dims differ: {t.shape} vs {xs[0].shape}"
            )
    widths = [t.shape[-1] for t in xs]
    offsets = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=-1))

    return _emit(tuple(xs), np.concatenate([t.data for t in xs], axis=-1), vjp)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    xd = x.data
    if xd.ndim != 2 or not (0 <= lo < hi <= xd.shape[1]):
        raise ShapeError(f"slice_cols: bad slice [{lo}:{hi}] for shape {xd.shape}")

    def vjp(g):
        out = np.zeros_like(xd)
        out[:, lo:hi] = g
        return (out,)

    return _emit((x,), xd[:, lo:hi].copy(), vjp)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows by a constant index vector; backward scatter-adds."""
    xd = x.data
    idx = np.asarray(idx)
    if xd.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: x{xd.shape} with idx{idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= xd.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {xd.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(xd)
        np.add.at(out, idx, g)
        return (out,)

    return _emit((x,), xd[idx], vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    xd = x.data
    new = np.reshape(xd, shape)
    if new.size != xd.size:
        raise ShapeError(f"reshape: cannot view {xd.shape} as {shape}")
    old_shape = xd.shape

    def vjp(g):
        return (np.reshape(g, old_shape),)

    return _emit((x,), np.ascontiguousarray(new), vjp)


# ---------------------------------------------------------------------------
# reductions


def mean_pool_rows(x: Tensor) -> Tensor:
    """Mean over rows of an [N,C] tensor, yielding a [C] vector."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"mean_pool_rows: expected 2-D input, got {xd.shape}")
    n = xd.shape[0]

    def vjp(g):
        return (np.broadcast_to(g / n, xd.shape).copy(),)

    return _emit((x,), xd.mean(axis=0), vjp)


def mean_pool_segments(x: Tensor, seg: int) -> Tensor:
    """Mean over each contiguous block of seg rows: [S*seg, C] -> [S, C]."""
    xd = x.data
    if xd.ndim != 2 or seg < 1 or xd.shape[0] % seg != 0:
        raise ShapeError(f"mean_pool_segments: shape {xd.shape} with segment {seg}")
    s = xd.shape[0] // seg
    out = xd.reshape(s, seg, xd.shape[1]).mean(axis=1)

    def vjp(g):
        return (np.repeat(g / seg, seg, axis=0),)

    return _emit((x,), out, vjp)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Broadcast-add a [C] vector to every row of an [N,C] tensor."""
    xd, vd = x.data, v.data
    if xd.ndim != 2 or vd.shape != (xd.shape[1],):
        raise ShapeError(f"add_rowvec: shapes {xd.shape} and {vd.shape}")

    def vjp(g):
        return g, g.sum(axis=0)

    return _emit((x, v), xd + vd, vjp)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Scale every row of an [N,C] tensor elementwise by a [C] vector."""
    xd, vd = x.data, v.data
    if xd.ndim != 2 or vd.shape != (xd.shape[1],):
        raise ShapeError(f"mul_rowvec: shapes {xd.shape} and {vd.shape}")

    def vjp(g):
        return g * vd, (g * xd).sum(axis=0)

    return _emit((x, v), xd * vd, vjp)


def row_sums(x: Tensor) -> Tensor:
    """Sum over the last dim of an [N,C] tensor, yielding a [N] vector."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"row_sums: expected 2-D input, got {xd.shape}")

    def vjp(g):
        return (np.broadcast_to(g[:, None], xd.shape).copy(),)

    return _emit((x,), xd.sum(axis=1), vjp)


def mean_all(x: Tensor) -> Tensor:
    xd = x.data
    n = xd.size

    def vjp(g):
        return (np.full_like(xd, float(g) / n),)

    return _emit((x,), xd.mean(), vjp)


def sum_all(x: Tensor) -> Tensor:
    xd = x.data

    def vjp(g):
        return (np.full_like(xd, float(g)),)

    return _emit((x,), xd.sum(), vjp)


# ---------------------------------------------------------------------------
# max aggregation


def max_over_set(xs: list[Tensor]) -> Tensor:
    """Elementwise maximum over >=1 same-shape tensors.

    The argmax set index is recorded per element (ties go to the lowest
    index); backward routes each element's gradient only to its argmax
    source.
    """
    if not xs:
        raise ValueError("max_over_set: need at least one tensor")
    shape = xs[0].shape
    for t in xs:
        if t.shape != shape:
            raise ShapeError(f"max_over_set: shapes {t.shape} and {shape} differ")
    stacked = np.stack([t.data for t in xs], axis=0)
    am = stacked.argmax(axis=0)

    def vjp(g):
        return tuple(g * (am == k) for k in range(len(xs)))

    return _emit(tuple(xs), stacked.max(axis=0), vjp)


def max_relative_group(
    dest: Tensor, src: Tensor, idx: np.ndarray, col_lo: int, col_hi: int
) -> Tensor:
    """Fused per-group max-relative aggregation.

    For one feature-column slice [col_lo:col_hi), computes per destination row
    i the elementwise max over its k selected neighbors of
    (dest[i, slice] - src[idx[i, j], slice]). idx has shape [N_dest, k] and is
    a constant of the forward pass. Equivalent to composing gather_rows, sub,
    and max_over_set per neighbor slot, but records a single tape node.
    """
    dd, sd = dest.data, src.data
    if dd.ndim != 2 or sd.ndim != 2 or dd.shape[1] != sd.shape[1]:
        raise ShapeError(f"max_relative_group: dest{dd.shape} vs src{sd.shape}")
    if not (0 <= col_lo < col_hi <= dd.shape[1]):
        raise ShapeError(
            f"max_relative_group: bad slice [{col_lo}:{col_hi}] for width {dd.shape[1]}"
        )
    idx = np.asarray(idx)
    if idx.ndim != 2 or idx.shape[0] != dd.shape[0]:
        raise ShapeError(f"max_relative_group: idx{idx.shape} vs dest{dd.shape}")
    if idx.min() < 0 or idx.max() >= sd.shape[0]:
        raise RuntimeError(
            f"max_relative_group: neighbor index out of range for {sd.shape[0]} sources"
        )
    d = dd[:, col_lo:col_hi]
    s = sd[:, col_lo:col_hi][idx]  # [N_dest, k, w]
    diffs = d[:, None, :] - s
    out = diffs.max(axis=1)

    tape = active_tape()
    if tape is None:
        return Tensor.wrap(out)

    am = diffs.argmax(axis=1)  # ties -> lowest neighbor slot
    nd, w = d.shape
    chosen = np.take_along_axis(idx, am, axis=1)  # source row per output element
    cols = np.broadcast_to(np.arange(w), (nd, w))

    def vjp(g):
        gd = np.zeros_like(dd)
        gd[:, col_lo:col_hi] = g
        gs = np.zeros_like(sd)
        np.subtract.at(gs[:, col_lo:col_hi], (chosen, cols), g)
        return gd, gs

    out_t = Tensor.wrap(out)
    tape.record((dest, src), out_t, vjp)
    return out_t
