"""Multi-label evaluation suite: mAP plus thresholded and Top-3 P/R/F1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    map: float
    cp: float
    cr: float
    cf1: float
    op: float
    or_: float
    of1: float
    top3_cf1: float
    top3_of1: float
    per_class_ap: list[float]

    def as_dict(self) -> dict:
        return {
            "map": self.map,
            "cp": self.cp,
            "cr": self.cr,
            "cf1": self.cf1,
            "op": self.op,
            "or": self.or_,
            "of1": self.of1,
            "top3_cf1": self.top3_cf1,
            "top3_of1": self.top3_of1,
            "per_class_ap": self.per_class_ap,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def average_precision(scores, targets) -> float:
    """Mean of precision at each positive's rank (descending scores,
    ties by ascending index)."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError(f"average_precision: shapes {s.shape} vs {t.shape}")
    n_pos = int((t == 1).sum())
    if n_pos == 0:
        raise ValueError("average_precision: no positive targets")
    order = np.argsort(-s, kind="stable")
    ranked = t[order] == 1
    hits = np.cumsum(ranked)
    ranks = np.arange(1, s.size + 1)
    return float((hits[ranked] / ranks[ranked]).sum() / n_pos)


def _pooled_and_per_class(preds: np.ndarray, targets: np.ndarray):
    tp = ((preds == 1) & (targets == 1)).sum(axis=0).astype(np.float64)
    fp = ((preds == 1) & (targets == 0)).sum(axis=0).astype(np.float64)
    fn = ((preds == 0) & (targets == 1)).sum(axis=0).astype(np.float64)
    cp = float(np.mean([_safe_div(tp[c], tp[c] + fp[c]) for c in range(preds.shape[1])]))
    cr = float(np.mean([_safe_div(tp[c], tp[c] + fn[c]) for c in range(preds.shape[1])]))
    op = _safe_div(tp.sum(), tp.sum() + fp.sum())
    orr = _safe_div(tp.sum(), tp.sum() + fn.sum())
    return cp, cr, op, orr


def top3_predictions(scores: np.ndarray) -> np.ndarray:
    """Per sample mark the 3 highest-scoring classes positive (no threshold);
    score ties resolve toward the lower class index."""
    n, num_classes = scores.shape
    take = min(3, num_classes)
    preds = np.zeros_like(scores, dtype=np.int64)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :take]
    preds[np.arange(n)[:, None], order] = 1
    return preds


def evaluate(scores, targets, threshold: float = 0.5) -> MetricsReport:
    """Full report at the given threshold plus ranking and Top-3 metrics.

    Classes with no positive targets are excluded from mAP with a warning;
    empty precision/recall denominators count as 0.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets)
    if s.shape != t.shape or s.ndim != 2:
        raise ValueError(f"evaluate: shapes {s.shape} vs {t.shape}")
    num_classes = s.shape[1]

    aps: list[float] = []
    skipped = []
    for c in range(num_classes):
        if (t[:, c] == 1).any():
            aps.append(average_precision(s[:, c], t[:, c]))
        else:
            aps.append(float("nan"))
            skipped.append(c)
    if skipped:
        warnings.warn(f"classes without positives excluded from mAP: {skipped}")
    valid = [a for a in aps if not np.isnan(a)]
    mean_ap = float(np.mean(valid)) if valid else 0.0

    preds = (s >= threshold).astype(np.int64)
    cp, cr, op, orr = _pooled_and_per_class(preds, t)
    t3 = top3_predictions(s)
    t3_cp, t3_cr, t3_op, t3_or = _pooled_and_per_class(t3, t)

    return MetricsReport(
        map=mean_ap,
        cp=cp,
        cr=cr,
        cf1=_f1(cp, cr),
        op=op,
        or_=orr,
        of1=_f1(op, orr),
        top3_cf1=_f1(t3_cp, t3_cr),
        top3_of1=_f1(t3_op, t3_or),
        per_class_ap=aps,
    )
