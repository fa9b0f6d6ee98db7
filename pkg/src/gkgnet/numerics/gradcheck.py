"""Central finite-difference gradient oracle.

Compares analytic gradients from the tape against (f(x+h)-f(x-h))/(2h) per
scalar parameter. This is the independent check of the backward pass; it
never reuses tape machinery for the numeric side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .params import ParamStore
from .tape import Tape, backward
from .tensor import NumericError, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: int
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def _scalar(value: Tensor) -> float:
    out = value.item()
    if not np.isfinite(out):
        raise NumericError(f"gradient check: objective is non-finite ({out})")
    return out


def finite_difference_gradcheck(
    f: Callable[[], Tensor],
    store: ParamStore,
    h: float = 1e-5,
    sample_fraction: float = 1.0,
    seed: int = 0,
) -> GradCheckResult:
    """Check every parameter of f (a no-argument scalar objective).

    f is evaluated once under a tape for the analytic gradients, then twice
    per checked scalar without a tape. Relative error per scalar is
    |a-n| / max(|a|, |n|, 1e-8). Requires float64 parameters; sample_fraction
    below 1 checks a seeded random subset of each parameter's entries.
    """
    if h <= 0:
        raise ValueError(f"gradient check: h must be positive, got {h}")
    if not (0.0 < sample_fraction <= 1.0):
        raise ValueError(f"gradient check: sample_fraction must be in (0,1], got {sample_fraction}")
    for p in store:
        if p.value.data.dtype != np.float64:
            raise ValueError(
                f"gradient check requires float64 parameters; {p.name!r} is {p.value.data.dtype}"
            )

    store.zero_grad()
    with Tape() as tape:
        loss = f()
    _scalar(loss)
    backward(tape, loss, store)
    analytic = {p.name: p.grad.copy() for p in store}

    rng = np.random.default_rng(seed)
    worst = (0.0, "", -1)
    checked = 0
    for p in store:
        flat = p.value.data.reshape(-1)
        size = flat.size
        if sample_fraction >= 1.0:
            indices = range(size)
        else:
            count = max(1, int(round(sample_fraction * size)))
            indices = np.sort(rng.choice(size, size=count, replace=False))
        a_flat = analytic[p.name].reshape(-1)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f())
            flat[i] = orig - h
            fm = _scalar(f())
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if rel > worst[0]:
                worst = (rel, p.name, int(i))
    return GradCheckResult(worst[0], worst[1], worst[2], checked)
