"""Group max-relative graph convolution module.

One parameter set serves both flavors: patch-level (destination and source
are the same patch set) and cross-level (patches feed label nodes). Each
invocation rebuilds its grouped graph from the current features, aggregates
per group by maximizing the relative feature (dest - neighbor), fuses the
concatenated groups through a linear layer, and applies a residual
feed-forward update. The feed-forward branch opens with a gained RMS
normalization of its input; without it the unnormalized residual stack
drifts to divergence during training, and with the gain inside the branch a
zeroed output layer still reduces the whole module to an exact identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import GroupedKnnGraph, NodeSet, group_knn
from .numerics import Parameter, ParamStore, Tensor, ops

_NORM_EPS = 1e-6


@dataclass
class AffineParams:
    w: Parameter
    b: Parameter

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.w.value, self.b.value)


@dataclass
class GroupKgcnParams:
    """Parameters of one module: fuse linear (2C -> C), a per-channel RMS
    gain, and the FFN (C -> rC -> C)."""

    fuse: AffineParams
    norm_gain: Parameter
    ffn_w1: AffineParams
    ffn_w2: AffineParams
    expansion: int
    groups: int
    k: int

    def __post_init__(self):
        c = self.fuse.w.shape[1]
        if self.fuse.w.shape[0] != 2 * c:
            raise ValueError(f"fuse must map 2C->C, got {self.fuse.w.shape}")
        if self.norm_gain.shape != (c,):
            raise ValueError(f"norm gain must have shape ({c},), got {self.norm_gain.shape}")
        if self.ffn_w1.w.shape != (c, self.expansion * c):
            raise ValueError(f"ffn_w1 must map C->{self.expansion}C, got {self.ffn_w1.w.shape}")
        if self.ffn_w2.w.shape != (self.expansion * c, c):
            raise ValueError(f"ffn_w2 must map {self.expansion}C->C, got {self.ffn_w2.w.shape}")

    @property
    def width(self) -> int:
        return self.fuse.w.shape[1]


@dataclass
class GroupAggregate:
    """Per-group aggregated tensors, each [N_dest, C/G]."""

    per_group: list[Tensor]


def init_group_kgcn(
    store: ParamStore, prefix: str, dim: int, groups: int, k: int, expansion: int = 4
) -> GroupKgcnParams:
    hidden = expansion * dim
    return GroupKgcnParams(
        fuse=AffineParams(
            store.glorot(f"{prefix}.fuse.w", 2 * dim, dim),
            store.zeros(f"{prefix}.fuse.b", (dim,)),
        ),
        norm_gain=store.add(f"{prefix}.norm.g", np.ones(dim)),
        ffn_w1=AffineParams(
            store.glorot(f"{prefix}.ffn1.w", dim, hidden),
            store.zeros(f"{prefix}.ffn1.b", (hidden,)),
        ),
        ffn_w2=AffineParams(
            store.glorot(f"{prefix}.ffn2.w", hidden, dim),
            store.zeros(f"{prefix}.ffn2.b", (dim,)),
        ),
        expansion=expansion,
        groups=groups,
        k=k,
    )


def rms_normalize(x: Tensor, gain: Parameter) -> Tensor:
    """Row-wise RMS normalization with a learnable per-channel gain."""
    width = x.shape[-1]
    unit = ops.row_normalize(x, _NORM_EPS)
    return ops.mul_rowvec(ops.smul(unit, math.sqrt(width)), gain.value)


def group_max_relative(dest: NodeSet, src: NodeSet, graph: GroupedKnnGraph) -> GroupAggregate:
    """Per group g: elementwise max over neighbors of (dest slice - neighbor slice)."""
    c = dest.width
    if c % graph.num_groups != 0:
        raise ValueError(f"group_max_relative: width {c} not divisible by {graph.num_groups}")
    width = c // graph.num_groups
    parts = []
    for g in range(graph.num_groups):
        lo = g * width
        parts.append(
            ops.max_relative_group(dest.features, src.features, graph.idx[g], lo, lo + width)
        )
    return GroupAggregate(parts)


def group_kgcn_forward(
    dest: NodeSet,
    src: NodeSet,
    params: GroupKgcnParams,
    graph: GroupedKnnGraph | None = None,
    capture: list[GroupedKnnGraph] | None = None,
) -> NodeSet:
    """One module application; returns the updated destination set.

    The grouped graph is rebuilt from the current features unless an explicit
    graph is supplied (used to freeze indices during gradient checking).
    The update is

        out = d + FFN(d + fuse(concat(d, aggregated groups)))

    with FFN(x) = w2(gelu(w1(rmsnorm(x)))); zeroing ffn_w2 makes the module
    an exact identity on the destination features.
    """
    if graph is None:
        graph = group_knn(dest, src, params.groups, params.k)
    if capture is not None:
        capture.append(graph)
    feats = dest.features
    agg = group_max_relative(dest, src, graph)
    fused = params.fuse(ops.concat_last_dim([feats] + agg.per_group))
    z = rms_normalize(ops.add(feats, fused), params.norm_gain)
    ffn_out = params.ffn_w2(ops.gelu(params.ffn_w1(z)))
    return NodeSet(ops.add(feats, ffn_out), kind=dest.kind, grid=dest.grid, batch=dest.batch)


def cross_level_update(
    labels: NodeSet,
    patches: NodeSet,
    params: GroupKgcnParams,
    graph: GroupedKnnGraph | None = None,
    capture: list[GroupedKnnGraph] | None = None,
) -> NodeSet:
    """Message passing strictly from patch nodes into label nodes."""
    return group_kgcn_forward(labels, patches, params, graph=graph, capture=capture)
