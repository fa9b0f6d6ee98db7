"""Training objectives: label-smoothed BCE plus asymmetric loss.

Both act on the fused class logits and reduce by mean over classes (the
trainer averages over the batch). Probabilities are clamped away from 0 and 1
before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, constant, ops


@dataclass(frozen=True)
class LossConfig:
    smooth_eps: float = 0.05
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    floor: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.smooth_eps < 1.0:
            raise ValueError(f"smooth_eps must be in [0,1), got {self.smooth_eps}")
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be nonnegative")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError(f"margin must be in [0,1), got {self.margin}")
        if not 0.0 < self.floor < 0.5:
            raise ValueError(f"floor must be in (0,0.5), got {self.floor}")


def _targets_array(targets, shape: tuple) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != shape:
        raise ValueError(f"targets shape {t.shape} does not match logits shape {shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("targets must be binary")
    return t


def _clamped_probs(logits: Tensor, floor: float) -> Tensor:
    return ops.clamp(ops.sigmoid(logits), floor, 1.0 - floor)


def label_smooth_bce(logits: Tensor, targets, eps: float, floor: float = 1e-8) -> Tensor:
    """Mean over classes of BCE against targets smoothed to y*(1-eps)+eps/2.

    Accepts a class-logit vector [L] or a stacked batch [B, L]; the mean runs
    over every (sample, class) entry either way.
    """
    y = _targets_array(targets, logits.shape)
    yp = y * (1.0 - eps) + eps / 2.0
    p = _clamped_probs(logits, floor)
    ll = ops.add(
        ops.mul(constant(yp), ops.log(p)),
        ops.mul(constant(1.0 - yp), ops.log(ops.rsub_const(1.0, p))),
    )
    return ops.smul(ops.mean_all(ll), -1.0)


def asymmetric_loss(
    logits: Tensor,
    targets,
    gamma_pos: float,
    gamma_neg: float,
    margin: float,
    floor: float = 1e-8,
) -> Tensor:
    """Focal-style multi-label loss with a probability margin on negatives.

    Positives contribute (1-p)^g+ * (-log p). Negatives shift the probability
    to max(p - margin, 0), zeroing easy negatives exactly, and contribute
    p_m^g- * (-log(1 - p_m)). Mean over classes (and batch for [B, L] input).
    """
    y = _targets_array(targets, logits.shape)
    p = _clamped_probs(logits, floor)
    pos = ops.smul(ops.log(p), -1.0)
    if gamma_pos > 0:
        pos = ops.mul(ops.pow_const(ops.rsub_const(1.0, p), gamma_pos), pos)
    pos = ops.mul(constant(y), pos)
    pm = ops.clamp_min(ops.add_const(p, -margin), 0.0)
    neg = ops.smul(ops.log(ops.rsub_const(1.0, pm)), -1.0)
    if gamma_neg > 0:
        neg = ops.mul(ops.pow_const(pm, gamma_neg), neg)
    neg = ops.mul(constant(1.0 - y), neg)
    return ops.mean_all(ops.add(pos, neg))


def total_loss(logits: Tensor, targets, cfg: LossConfig) -> Tensor:
    """Sum of the smoothed BCE and the asymmetric loss."""
    return ops.add(
        label_smooth_bce(logits, targets, cfg.smooth_eps, cfg.floor),
        asymmetric_loss(
            logits, targets, cfg.gamma_pos, cfg.gamma_neg, cfg.margin, cfg.floor
        ),
    )
