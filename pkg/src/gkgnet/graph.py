"""Grouped K-nearest-neighbor graph construction over node sets.

Two routes exist on purpose: knn_indices is a deliberately naive per-row
reference (loops and a full sort), while group_knn is the production kernel
(one partition-based top-k per feature group). Both rank candidates by
descending cosine similarity with ties broken by ascending source index, so
the G=1 grouped graph must reproduce the oracle exactly.

Node sets may carry a batch of independent samples stacked along the row
axis; graphs are then built per sample in one shot and neighbor indices are
offset into the stacked rows. Similarity is computed on raw node features
outside the gradient tape: the selected indices are constants of the forward
pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor

_NORM_EPS = 1e-12


@dataclass
class NodeSet:
    """Feature rows for image patches or label embeddings.

    count is the per-sample node count; with batch > 1 the feature matrix
    holds batch stacked samples of count rows each.
    """

    features: Tensor
    kind: str = "patch"  # "patch" | "label"
    grid: tuple[int, int] | None = None  # (rows, cols) for patch nodes
    batch: int = 1

    def __post_init__(self):
        if self.kind not in ("patch", "label"):
            raise ValueError(f"NodeSet: kind must be 'patch' or 'label', got {self.kind!r}")
        if self.features.data.ndim != 2:
            raise ValueError(f"NodeSet: features must be 2-D, got shape {self.features.shape}")
        if self.batch < 1 or self.features.shape[0] % self.batch != 0:
            raise ValueError(
                f"NodeSet: {self.features.shape[0]} rows do not split into {self.batch} samples"
            )
        if self.grid is not None:
            h, w = self.grid
            if h * w != self.count:
                raise ValueError(
                    f"NodeSet: grid {self.grid} does not cover {self.count} nodes"
                )

    @property
    def count(self) -> int:
        """Nodes per sample."""
        return self.features.shape[0] // self.batch

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass
class GroupedKnnGraph:
    """Per-group neighbor table plus the similarity-multiply cost counter.

    idx[g, i, :] holds the k selected source row indices for destination row
    i in group g, sorted by descending cosine similarity of the group's
    feature slice (ties by ascending index); the k indices per (g, i) are
    distinct. For batched node sets the indices point into the stacked
    source rows and never cross samples.
    """

    num_groups: int
    k: int
    idx: np.ndarray  # int64 [G, batch * N_dest, k]
    sim_multiply_count: int = field(default=0)


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    norms = np.sqrt((a * a).sum(axis=-1, keepdims=True))
    return a / np.maximum(norms, _NORM_EPS)


def _topk_row_exact(sims_row: np.ndarray, k: int) -> np.ndarray:
    """Exact (descending value, ascending index) top-k for one row."""
    order = np.argsort(-sims_row, kind="stable")
    return order[:k]


def _topk_desc(sims: np.ndarray, k: int) -> np.ndarray:
    """Top-k indices per row by (descending value, ascending index).

    An O(N) argpartition selects each row's k largest values, ordered by a
    small sort. Tied values make the partition's choice and ordering
    arbitrary, so rows whose selection touches a duplicated value (a
    duplicated selected value, or a boundary value that also occurs outside
    the selection) are redone exactly; such rows are rare for continuous
    features.
    """
    nd, ns = sims.shape
    if k == ns:
        return np.argsort(-sims, axis=1, kind="stable")
    cand = np.argpartition(sims, ns - k, axis=1)[:, ns - k :]
    vals = np.take_along_axis(sims, cand, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    sel = np.take_along_axis(cand, order, axis=1)
    svals = np.take_along_axis(vals, order, axis=1)
    dup_inside = (svals[:, 1:] == svals[:, :-1]).any(axis=1)
    boundary = svals[:, -1]
    dup_boundary = (sims == boundary[:, None]).sum(axis=1) > 1
    bad = np.nonzero(dup_inside | dup_boundary)[0]
    for i in bad:
        sel[i] = _topk_row_exact(sims[i], k)
    return sel


def knn_indices(dest: NodeSet, src: NodeSet, k: int) -> np.ndarray:
    """Brute-force cosine top-k per destination row; the reference oracle."""
    if dest.batch != 1 or src.batch != 1:
        raise ValueError("knn_indices: the oracle works on single-sample node sets")
    if dest.width != src.width:
        raise ValueError(f"knn_indices: feature dims differ: {dest.width} vs {src.width}")
    ns = src.count
    if k < 1 or k > ns:
        raise ValueError(f"knn_indices: k={k} out of range for {ns} source nodes")
    dn = _normalize_rows(np.asarray(dest.features.data, dtype=np.float64))
    sn = _normalize_rows(np.asarray(src.features.data, dtype=np.float64))
    out = np.empty((dest.count, k), dtype=np.int64)
    for i in range(dest.count):
        sims = [float(np.dot(dn[i], sn[j])) for j in range(ns)]
        order = sorted(range(ns), key=lambda j: (-sims[j], j))
        out[i] = order[:k]
    return out


def group_knn(dest: NodeSet, src: NodeSet, num_groups: int, k: int) -> GroupedKnnGraph:
    """Split features into contiguous groups and run cosine top-k per group.

    k is clamped to the per-sample source count so late pyramid stages with
    few nodes remain valid. The multiply counter adds
    G * N_src * N_dest * (C/G) per sample, i.e. exactly N_src * N_dest * C
    regardless of G.
    """
    c = dest.width
    if src.width != c:
        raise ValueError(f"group_knn: feature dims differ: {c} vs {src.width}")
    if dest.batch != src.batch:
        raise ValueError(f"group_knn: batch sizes differ: {dest.batch} vs {src.batch}")
    if num_groups < 1 or c % num_groups != 0:
        raise ValueError(f"group_knn: width {c} not divisible by {num_groups} groups")
    if src.count < 1:
        raise ValueError("group_knn: source node set is empty")
    if k < 1:
        raise ValueError(f"group_knn: k must be >= 1, got {k}")
    b, nd, ns = dest.batch, dest.count, src.count
    kk = min(k, ns)
    width = c // num_groups
    dd = dest.features.data.reshape(b, nd, c)
    sd = src.features.data.reshape(b, ns, c)
    offsets = (np.arange(b, dtype=np.int64) * ns).repeat(nd)[:, None]
    idx = np.empty((num_groups, b * nd, kk), dtype=np.int64)
    for g in range(num_groups):
        lo, hi = g * width, (g + 1) * width
        dn = _normalize_rows(dd[:, :, lo:hi])
        sn = _normalize_rows(sd[:, :, lo:hi])
        sims = np.matmul(dn, np.swapaxes(sn, 1, 2)).reshape(b * nd, ns)
        idx[g] = _topk_desc(sims, kk) + offsets
    cost = num_groups * b * ns * nd * width
    return GroupedKnnGraph(num_groups=num_groups, k=kk, idx=idx, sim_multiply_count=cost)


def neighbor_union_size(graph: GroupedKnnGraph, i: int) -> int:
    """Number of distinct sources destination row i reaches across groups."""
    if not (0 <= i < graph.idx.shape[1]):
        raise IndexError(f"neighbor_union_size: destination {i} out of range")
    return len(np.unique(graph.idx[:, i, :]))
