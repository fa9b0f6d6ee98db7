"""Four-stage patch/label dual-graph network.

An image becomes a grid of embedded patch nodes; a learnable embedding table
provides one label node per category. Each stage runs its patch-level modules
(patches update patches), then its cross-level modules (patches update
labels). Between stages the patch grid is 2x2 mean-pooled and projected to
the next width, and label nodes are linearly projected to match. The
classifier adds a patch-head logit (affine over mean-pooled patch features)
and a per-class label-head logit, and squashes the sum through a sigmoid.

Execution is batched: a batch of images is stacked along the node axis and
graphs are built per sample, so training steps record one set of tape ops for
the whole batch. forward() is the single-image view of the same computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gcn
from .gcn import AffineParams, GroupKgcnParams
from .graph import GroupedKnnGraph, NodeSet
from .numerics import ParamStore, Tensor, constant, default_dtype, ops

NUM_STAGES = 4


@dataclass(frozen=True)
class ModelConfig:
    dims: tuple[int, int, int, int]
    patch_modules: tuple[int, int, int, int]
    cross_modules: tuple[int, int, int, int]
    patch_size: int
    image_size: tuple[int, int]
    channels: int
    num_labels: int
    k: int
    groups: int
    ffn_expansion: int = 4

    def validate(self) -> None:
        h, w = self.image_size
        p = self.patch_size
        if h % p != 0 or w % p != 0:
            raise ValueError(f"image size {self.image_size} not divisible by patch size {p}")
        gh, gw = h // p, w // p
        halvings = NUM_STAGES - 1
        if gh % (1 << halvings) or gw % (1 << halvings):
            raise ValueError(
                f"patch grid {(gh, gw)} must divide by {1 << halvings} for {NUM_STAGES} stages"
            )
        for i, d in enumerate(self.dims):
            if d % self.groups != 0:
                raise ValueError(f"dims[{i}]={d} not divisible by groups={self.groups}")
        if any(a > b for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError(f"dims must be nondecreasing, got {self.dims}")
        if self.k < 1 or self.groups < 1 or self.num_labels < 1:
            raise ValueError("k, groups, and num_labels must all be >= 1")
        if self.ffn_expansion < 1:
            raise ValueError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")
        if any(n < 0 for n in self.patch_modules + self.cross_modules):
            raise ValueError("module counts must be nonnegative")

    def grids(self) -> list[tuple[int, int]]:
        gh, gw = self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size
        return [(gh >> s, gw >> s) for s in range(NUM_STAGES)]


@dataclass
class StagePlan:
    num_patch_modules: int
    num_cross_modules: int
    dim: int
    grid: tuple[int, int]


@dataclass
class ModuleSnapshot:
    """One module invocation's graph, with enough context to redraw it."""

    kind: str  # "patch" | "cross"
    stage: int
    graph: GroupedKnnGraph
    grid: tuple[int, int]  # source patch grid
    dest_count: int  # per-sample destinations
    src_count: int  # per-sample sources


@dataclass
class BatchTrace:
    """Classifier outputs for a stacked batch; all tensors are [B, L]."""

    logits_patch: Tensor
    logits_label: Tensor
    logits: Tensor
    scores: Tensor
    snapshots: list[ModuleSnapshot] | None = None


@dataclass
class ForwardTrace:
    """Single-image view: all tensors are [L]."""

    logits_patch: Tensor
    logits_label: Tensor
    logits: Tensor  # the sum both losses and scores are built from
    scores: Tensor  # sigmoid(logits)
    snapshots: list[ModuleSnapshot] | None = None


class GkgModel:
    """Model parameters plus the stage plan; forward is pure per snapshot."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore(seed)
        grids = cfg.grids()
        self.plans = [
            StagePlan(cfg.patch_modules[s], cfg.cross_modules[s], cfg.dims[s], grids[s])
            for s in range(NUM_STAGES)
        ]
        st = self.store
        p, ch, c1 = cfg.patch_size, cfg.channels, cfg.dims[0]
        n1 = grids[0][0] * grids[0][1]
        in_dim = p * p * ch
        self.patch_embed = AffineParams(
            st.glorot("patch_embed.w", in_dim, c1), st.zeros("patch_embed.b", (c1,))
        )
        self.pos_table = st.zeros("patch_embed.pos", (n1, c1))
        self.label_embed = st.glorot(
            "label_embed", cfg.num_labels, c1, shape=(cfg.num_labels, c1)
        )
        self.patch_params: list[list[GroupKgcnParams]] = []
        self.cross_params: list[list[GroupKgcnParams]] = []
        for s in range(NUM_STAGES):
            dim = cfg.dims[s]
            self.patch_params.append(
                [
                    gcn.init_group_kgcn(
                        st, f"stage{s + 1}.patch{m}", dim, cfg.groups, cfg.k, cfg.ffn_expansion
                    )
                    for m in range(cfg.patch_modules[s])
                ]
            )
            self.cross_params.append(
                [
                    gcn.init_group_kgcn(
                        st, f"stage{s + 1}.cross{m}", dim, cfg.groups, cfg.k, cfg.ffn_expansion
                    )
                    for m in range(cfg.cross_modules[s])
                ]
            )
        self.downsamplers = []
        self.label_projectors = []
        for s in range(NUM_STAGES - 1):
            din, dout = cfg.dims[s], cfg.dims[s + 1]
            self.downsamplers.append(
                AffineParams(
                    st.glorot(f"down{s + 1}.w", din, dout), st.zeros(f"down{s + 1}.b", (dout,))
                )
            )
            self.label_projectors.append(
                AffineParams(
                    st.glorot(f"label_proj{s + 1}.w", din, dout),
                    st.zeros(f"label_proj{s + 1}.b", (dout,)),
                )
            )
        c4, nl = cfg.dims[-1], cfg.num_labels
        self.head_patch = AffineParams(
            st.glorot("head_patch.w", c4, nl), st.zeros("head_patch.b", (nl,))
        )
        # one independent affine map per class: logit[c] = <w[c], label_c> + b[c]
        self.head_label_w = st.glorot("head_label.w", nl, c4, shape=(nl, c4))
        self.head_label_b = st.zeros("head_label.b", (nl,))

    # -- structural pieces ----------------------------------------------------

    def _check_images(self, images: np.ndarray) -> None:
        h, w = self.cfg.image_size
        ch = self.cfg.channels
        if images.ndim != 4 or images.shape[1:] != (h, w, ch):
            raise ValueError(
                f"image batch shape {images.shape}, expected (B, {h}, {w}, {ch})"
            )

    def _patchify_batch(self, images: np.ndarray) -> NodeSet:
        self._check_images(images)
        b = images.shape[0]
        p, ch = self.cfg.patch_size, self.cfg.channels
        gh, gw = self.plans[0].grid
        n = gh * gw
        flat = (
            images.reshape(b, gh, p, gw, p, ch)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(b * n, p * p * ch)
        )
        x = ops.affine(constant(flat), self.patch_embed.w.value, self.patch_embed.b.value)
        x = ops.add(x, ops.gather_rows(self.pos_table.value, np.tile(np.arange(n), b)))
        return NodeSet(x, kind="patch", grid=(gh, gw), batch=b)

    def patchify_embed(self, image) -> NodeSet:
        """Cut one image into P x P patches, embed each, add the positional row."""
        img = self._as_image_array(image)
        if img.shape != (*self.cfg.image_size, self.cfg.channels):
            raise ValueError(
                f"patchify_embed: image shape {img.shape}, expected "
                f"{(*self.cfg.image_size, self.cfg.channels)}"
            )
        return self._patchify_batch(img[None])

    def downsample(self, patches: NodeSet, boundary: int) -> NodeSet:
        """2x2 non-overlapping mean pooling over the grid, then projection."""
        gh, gw = patches.grid
        if gh % 2 or gw % 2:
            raise ValueError(f"downsample: grid {(gh, gw)} must have even sides")
        oh, ow = gh // 2, gw // 2
        base = (np.arange(oh)[:, None] * 2 * gw + np.arange(ow)[None, :] * 2).reshape(-1)
        offs = np.arange(patches.batch, dtype=np.int64)[:, None] * (gh * gw)
        base = (base[None, :] + offs).reshape(-1)
        feats = patches.features
        pooled = ops.gather_rows(feats, base)
        for delta in (1, gw, gw + 1):
            pooled = ops.add(pooled, ops.gather_rows(feats, base + delta))
        pooled = ops.smul(pooled, 0.25)
        return NodeSet(
            self.downsamplers[boundary](pooled), kind="patch", grid=(oh, ow), batch=patches.batch
        )

    # -- forward ----------------------------------------------------------------

    @staticmethod
    def _as_image_array(image) -> np.ndarray:
        arr = image.data if isinstance(image, Tensor) else np.asarray(image)
        return np.asarray(arr, dtype=default_dtype())

    def forward_batch(
        self,
        images,
        capture_graphs: bool = False,
        graph_override: list[GroupedKnnGraph] | None = None,
    ) -> BatchTrace:
        """Run the four stages and the dual-head classifier on a batch.

        graph_override supplies pre-built graphs in module execution order
        (patch modules then cross modules per stage), freezing neighbor
        selection; capture_graphs records each module's graph instead.
        """
        if isinstance(images, (list, tuple)):
            images = np.stack([self._as_image_array(i) for i in images])
        else:
            images = self._as_image_array(images)
        b = images.shape[0]
        patches = self._patchify_batch(images)
        nl = self.cfg.num_labels
        label_rows = np.tile(np.arange(nl), b)
        labels = NodeSet(
            ops.gather_rows(self.label_embed.value, label_rows), kind="label", batch=b
        )
        snaps: list[ModuleSnapshot] | None = [] if capture_graphs else None
        override = iter(graph_override) if graph_override is not None else None

        def run(module, dest, src, kind, stage):
            g = next(override) if override is not None else None
            cap: list[GroupedKnnGraph] | None = [] if snaps is not None else None
            out = gcn.group_kgcn_forward(dest, src, module, graph=g, capture=cap)
            if snaps is not None:
                snaps.append(
                    ModuleSnapshot(
                        kind=kind,
                        stage=stage,
                        graph=cap[0],
                        grid=src.grid,
                        dest_count=dest.count,
                        src_count=src.count,
                    )
                )
            return out

        for s in range(NUM_STAGES):
            for module in self.patch_params[s]:
                patches = run(module, patches, patches, "patch", s)
            for module in self.cross_params[s]:
                labels = run(module, labels, patches, "cross", s)
            if s < NUM_STAGES - 1:
                patches = self.downsample(patches, s)
                labels = NodeSet(
                    self.label_projectors[s](labels.features), kind="label", batch=b
                )

        pooled = ops.mean_pool_segments(patches.features, patches.count)  # [B, C4]
        logits_patch = ops.affine(pooled, self.head_patch.w.value, self.head_patch.b.value)
        w_rows = ops.gather_rows(self.head_label_w.value, label_rows)
        per_class = ops.row_sums(ops.mul(labels.features, w_rows))  # [B*L]
        logits_label = ops.add_rowvec(ops.reshape(per_class, (b, nl)), self.head_label_b.value)
        logits = ops.add(logits_patch, logits_label)
        return BatchTrace(
            logits_patch=logits_patch,
            logits_label=logits_label,
            logits=logits,
            scores=ops.sigmoid(logits),
            snapshots=snaps,
        )

    def forward(
        self,
        image,
        capture_graphs: bool = False,
        graph_override: list[GroupedKnnGraph] | None = None,
    ) -> ForwardTrace:
        """Single-image forward pass; tensors in the trace have shape [L]."""
        img = self._as_image_array(image)
        bt = self.forward_batch(
            img[None], capture_graphs=capture_graphs, graph_override=graph_override
        )
        nl = (self.cfg.num_labels,)
        return ForwardTrace(
            logits_patch=ops.reshape(bt.logits_patch, nl),
            logits_label=ops.reshape(bt.logits_label, nl),
            logits=ops.reshape(bt.logits, nl),
            scores=ops.reshape(bt.scores, nl),
            snapshots=bt.snapshots,
        )

    def export_connections(self, image, label_names: list[str]) -> dict:
        """Connection record of one forward pass, per the published schema."""
        if len(label_names) != self.cfg.num_labels:
            raise ValueError(
                f"export_connections: {len(label_names)} names for {self.cfg.num_labels} labels"
            )
        trace = self.forward(image, capture_graphs=True)
        return connection_record(trace.snapshots, label_names)


def connection_record(snapshots: list[ModuleSnapshot], label_names: list[str]) -> dict:
    stages: list[dict] = [{"modules": []} for _ in range(NUM_STAGES)]
    for snap in snapshots:
        g_count, _, k = snap.graph.idx.shape
        edges = [
            {
                "dest": int(i),
                "group": int(g),
                "sources": [int(j) for j in snap.graph.idx[g, i]],
            }
            for i in range(snap.dest_count)
            for g in range(g_count)
        ]
        stages[snap.stage]["modules"].append(
            {
                "kind": snap.kind,
                "G": int(g_count),
                "k": int(k),
                "grid": [int(snap.grid[0]), int(snap.grid[1])],
                "edges": edges,
            }
        )
    return {"stages": stages, "labels": list(label_names)}
