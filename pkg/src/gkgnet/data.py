"""Synthetic multi-label shapes dataset.

Each sample is a noisy background with 1..max_objects distinct shape
prototypes stamped at random positions and scales; the label vector marks
which prototypes are present. Prototypes share colors in pairs so color alone
cannot separate all classes, and placement rejection-samples positions to
keep objects from occluding each other (bounded retries, so every labeled
object stays visible). Generation is fully deterministic per seed, and a
dataset directory round-trips bit-exactly (images are stored as raw
little-endian float32).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# name, RGB color; pairs deliberately share a color so shape matters
PROTOTYPES: list[tuple[str, tuple[float, float, float]]] = [
    ("square", (0.85, 0.18, 0.15)),
    ("circle", (0.85, 0.18, 0.15)),
    ("triangle", (0.16, 0.78, 0.22)),
    ("cross", (0.16, 0.78, 0.22)),
    ("bar", (0.20, 0.28, 0.88)),
    ("ring", (0.20, 0.28, 0.88)),
    ("diamond", (0.88, 0.82, 0.16)),
    ("checker", (0.88, 0.82, 0.16)),
]


@dataclass
class MultiLabelSample:
    image: np.ndarray  # float32 [H, W, 3] in [0, 1]
    labels: np.ndarray  # int64 [L] in {0, 1}


def label_names(num_labels: int) -> list[str]:
    if not 1 <= num_labels <= len(PROTOTYPES):
        raise ValueError(
            f"num_labels must be in [1, {len(PROTOTYPES)}], got {num_labels}"
        )
    return [name for name, _ in PROTOTYPES[:num_labels]]


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, s: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    if kind == "square":
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if kind == "circle":
        return dx * dx + dy * dy <= s * s
    if kind == "triangle":
        return (dy >= -s) & (dy <= s) & (np.abs(dx) <= (dy + s) / 2.0)
    if kind == "cross":
        third = s / 3.0
        arm1 = (np.abs(dx) <= third) & (np.abs(dy) <= s)
        arm2 = (np.abs(dy) <= third) & (np.abs(dx) <= s)
        return arm1 | arm2
    if kind == "bar":
        return (np.abs(dx) <= s) & (np.abs(dy) <= s / 3.0)
    if kind == "ring":
        r2 = dx * dx + dy * dy
        return (r2 <= s * s) & (r2 >= (s / 2.0) ** 2)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= s
    if kind == "checker":
        cell = ((np.floor(dx / 2.0) + np.floor(dy / 2.0)) % 2) == 0
        return (np.abs(dx) <= s) & (np.abs(dy) <= s) & cell
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_shapes_dataset(
    seed: int,
    n_samples: int,
    num_labels: int,
    image_size: int = 32,
    max_objects: int = 4,
) -> list[MultiLabelSample]:
    names = label_names(num_labels)
    if not 1 <= max_objects <= num_labels:
        raise ValueError(f"max_objects must be in [1, {num_labels}], got {max_objects}")
    rng = np.random.default_rng(seed)
    h = w = int(image_size)
    s_lo, s_hi = 0.12 * h, 0.21 * h
    samples = []
    for _ in range(n_samples):
        img = rng.uniform(0.32, 0.64, size=(h, w, 3))
        labels = np.zeros(num_labels, dtype=np.int64)
        n_obj = int(rng.integers(1, max_objects + 1))
        chosen = rng.choice(num_labels, size=n_obj, replace=False)
        placed: list[tuple[float, float, float]] = []
        for c in chosen:
            labels[c] = 1
            s = float(rng.uniform(s_lo, s_hi))
            cy = cx = 0.0
            for _attempt in range(20):
                cy = float(rng.uniform(s + 1, h - s - 1))
                cx = float(rng.uniform(s + 1, w - s - 1))
                if all(
                    (cy - py) ** 2 + (cx - px) ** 2 >= (0.7 * (s + ps)) ** 2
                    for py, px, ps in placed
                ):
                    break
            placed.append((cy, cx, s))
            jitter = float(rng.uniform(-0.07, 0.07))
            mask = _shape_mask(names[c], h, w, cy, cx, s)
            color = np.asarray(PROTOTYPES[c][1]) + jitter
            img[mask] = color
        samples.append(
            MultiLabelSample(
                image=np.clip(img, 0.0, 1.0).astype(np.float32), labels=labels
            )
        )
    return samples


def save_dataset(directory, samples: list[MultiLabelSample], names: list[str]) -> None:
    """Write index.json plus one raw little-endian float32 file per image."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    index = {
        "version": 1,
        "image_size": list(samples[0].image.shape),
        "label_names": names,
        "samples": [],
    }
    for i, sample in enumerate(samples):
        fname = f"img_{i:05d}.bin"
        (root / fname).write_bytes(sample.image.astype("<f4").tobytes())
        index["samples"].append({"file": fname, "labels": [int(v) for v in sample.labels]})
    (root / "index.json").write_text(json.dumps(index, indent=1))


def load_dataset(directory) -> tuple[list[MultiLabelSample], list[str]]:
    root = Path(directory)
    index = json.loads((root / "index.json").read_text())
    shape = tuple(index["image_size"])
    samples = []
    for entry in index["samples"]:
        raw = (root / entry["file"]).read_bytes()
        img = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        samples.append(
            MultiLabelSample(image=img, labels=np.asarray(entry["labels"], dtype=np.int64))
        )
    return samples, list(index["label_names"])
