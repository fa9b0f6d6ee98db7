"""Training loop, schedule, evaluation fan-out, and the affine baseline.

One process trains one model. Shuffling, init, and data are independently
seeded, every loggable number is deterministic for a given (config, seed),
and the JSONL log carries one line per epoch (epoch 0 is the pre-training
snapshot of the freshly initialized model).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import MultiLabelSample, generate_shapes_dataset, label_names
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, evaluate
from .model import GkgModel
from .numerics import (
    AdamW,
    NumericError,
    ParamStore,
    Tape,
    backward,
    constant,
    ops,
    using_dtype,
)

EVAL_CHUNK = 64


@dataclass
class SimpleTrace:
    logits: object
    scores: object


class AffineBaseline:
    """One affine layer over raw pixels; the reference floor for training runs."""

    def __init__(self, image_size, channels: int, num_labels: int, seed: int = 0):
        h, w = image_size
        self.in_dim = h * w * channels
        self.num_labels = num_labels
        self.store = ParamStore(seed)
        self.w = self.store.glorot("baseline.w", self.in_dim, num_labels)
        self.b = self.store.zeros("baseline.b", (num_labels,))

    def forward_batch(self, images, capture_graphs=False, graph_override=None):
        if isinstance(images, (list, tuple)):
            images = np.stack([np.asarray(i) for i in images])
        flat = constant(np.asarray(images).reshape(len(images), -1))
        logits = ops.affine(flat, self.w.value, self.b.value)
        return SimpleTrace(logits=logits, scores=ops.sigmoid(logits))

    def forward(self, image, capture_graphs=False, graph_override=None):
        trace = self.forward_batch(np.asarray(image)[None])
        shape = (self.num_labels,)
        return SimpleTrace(
            logits=ops.reshape(trace.logits, shape), scores=ops.reshape(trace.scores, shape)
        )


def generate_splits(cfg: RunConfig):
    """Train and validation samples from one deterministic stream."""
    total = cfg.data.train_size + cfg.data.val_size
    samples = generate_shapes_dataset(
        seed=cfg.data.seed,
        n_samples=total,
        num_labels=cfg.model.num_labels,
        image_size=cfg.model.image_size[0],
        max_objects=cfg.data.max_objects,
    )
    names = label_names(cfg.model.num_labels)
    return samples[: cfg.data.train_size], samples[cfg.data.train_size :], names


def lr_at(optim_cfg, step: int, epoch: int) -> float:
    """Linear warmup by step, then x0.1 from each decay epoch onward."""
    lr = optim_cfg.lr
    if optim_cfg.warmup_steps > 0:
        lr *= min(1.0, step / optim_cfg.warmup_steps)
    for e in optim_cfg.decay_epochs:
        if epoch >= e:
            lr *= 0.1
    return lr


def _chunks(samples, size):
    for start in range(0, len(samples), size):
        yield samples[start : start + size]


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Keeps late-stage training bounded: the update equations carry no
    normalization layers, so feature norms can drift until a single large
    batch gradient destabilizes the run. Returns the pre-clip norm.
    """
    sq = 0.0
    for p in store:
        sq += float((p.grad * p.grad).sum())
    norm = np.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in store:
            p.grad *= scale
    return float(norm)


def collect_scores(model, samples: list[MultiLabelSample]) -> np.ndarray:
    """Forward-only scores for a sample list; GKG_THREADS caps fan-out.

    Chunks are reduced in submission order, so the output is identical for
    any worker count.
    """
    workers = max(1, int(os.environ.get("GKG_THREADS", "1")))
    chunks = list(_chunks(samples, EVAL_CHUNK))

    def score(chunk):
        trace = model.forward_batch([s.image for s in chunk])
        return np.asarray(trace.scores.data, dtype=np.float64)

    if workers == 1 or len(chunks) < 2:
        blocks = [score(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(score, chunks))
    return np.concatenate(blocks, axis=0)


def evaluate_model(model, samples, threshold: float = 0.5) -> MetricsReport:
    scores = collect_scores(model, samples)
    targets = np.stack([s.labels for s in samples])
    return evaluate(scores, targets, threshold=threshold)


def mean_dataset_loss(model, samples, loss_cfg: LossConfig) -> float:
    total = 0.0
    for chunk in _chunks(samples, EVAL_CHUNK):
        trace = model.forward_batch([s.image for s in chunk])
        targets = np.stack([s.labels for s in chunk])
        total += total_loss(trace.logits, targets, loss_cfg).item() * len(chunk)
    return total / len(samples)


@dataclass
class TrainResult:
    history: list[dict]
    model: object
    best_epoch: int
    best_map: float
    log_path: Path | None
    final_checkpoint: Path | None
    best_checkpoint: Path | None


def train_run(
    cfg: RunConfig,
    out_dir=None,
    model=None,
    log_name: str = "train_log.jsonl",
    echo=None,
) -> TrainResult:
    """Train a model (a fresh GkgModel unless one is passed) under cfg.

    Writes the JSONL log plus final and best checkpoints into out_dir when
    given; checkpoints are only written for GkgModel instances.
    """
    with using_dtype(cfg.mode.precision):
        if model is None:
            model = GkgModel(cfg.model, seed=cfg.seed)
        train, val, _ = generate_splits(cfg)
        # the per-step rate comes from the schedule; lr=0 in the config is the
        # null optimizer (steps are skipped entirely)
        opt = AdamW(
            model.store,
            lr=1.0,
            betas=(cfg.optim.beta1, cfg.optim.beta2),
            weight_decay=cfg.optim.weight_decay,
        )
        shuffle_rng = np.random.default_rng([cfg.seed, 0xC0FFEE])

        out = Path(out_dir) if out_dir is not None else None
        log_file = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            log_file = open(out / log_name, "w")

        history: list[dict] = []

        def log_line(entry: dict):
            history.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if echo is not None:
                echo(json.dumps(entry))

        def epoch_entry(epoch, train_loss):
            report = evaluate_model(model, val)
            return {
                "epoch": epoch,
                "train_loss": float(train_loss),
                "val_map": float(report.map),
                "val_cf1": float(report.cf1),
                "val_of1": float(report.of1),
            }

        try:
            log_line(epoch_entry(0, mean_dataset_loss(model, train, cfg.loss)))
            best_map = history[0]["val_map"]
            best_epoch = 0
            best_state = model.store.state_dict()
            best_step = 0
            step = 0
            bs = cfg.optim.batch_size
            for epoch in range(1, cfg.optim.epochs + 1):
                perm = shuffle_rng.permutation(len(train))
                loss_sum = 0.0
                for start in range(0, len(train), bs):
                    batch = [train[i] for i in perm[start : start + bs]]
                    targets = np.stack([s.labels for s in batch])
                    step += 1
                    model.store.zero_grad()
                    with np.errstate(all="ignore"):
                        with Tape() as tape:
                            trace = model.forward_batch([s.image for s in batch])
                            loss = total_loss(trace.logits, targets, cfg.loss)
                        value = loss.item()
                        if not np.isfinite(value):
                            raise NumericError(
                                f"non-finite training loss {value} at step {step} (epoch {epoch})"
                            )
                        backward(tape, loss, model.store)
                        if cfg.optim.grad_clip > 0:
                            clip_gradients(model.store, cfg.optim.grad_clip)
                        lr = lr_at(cfg.optim, step, epoch)
                        if lr > 0:
                            opt.step(lr=lr)
                    loss_sum += value * len(batch)
                log_line(epoch_entry(epoch, loss_sum / len(train)))
                if history[-1]["val_map"] > best_map:
                    best_map = history[-1]["val_map"]
                    best_epoch = epoch
                    best_state = model.store.state_dict()
                    best_step = step
        finally:
            if log_file is not None:
                log_file.close()

        final_path = best_path = None
        if out is not None and isinstance(model, GkgModel):
            rng_state = shuffle_rng.bit_generator.state
            final_path = out / "checkpoint_final.json"
            best_path = out / "checkpoint_best.json"
            save_checkpoint(final_path, model, cfg, step, rng_state)
            save_checkpoint(
                best_path, model, cfg, best_step, rng_state, param_values=best_state
            )
        return TrainResult(
            history=history,
            model=model,
            best_epoch=best_epoch,
            best_map=best_map,
            log_path=(out / log_name) if out is not None else None,
            final_checkpoint=final_path,
            best_checkpoint=best_path,
        )


def train_affine_baseline(cfg: RunConfig, out_dir=None) -> TrainResult:
    """The single-affine-layer control trained under the identical schedule."""
    with using_dtype(cfg.mode.precision):
        baseline = AffineBaseline(
            cfg.model.image_size, cfg.model.channels, cfg.model.num_labels, seed=cfg.seed
        )
    return train_run(cfg, out_dir=out_dir, model=baseline, log_name="baseline_log.jsonl")
