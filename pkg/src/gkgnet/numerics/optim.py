"""AdamW: adaptive moments with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


class AdamW:
    """Decoupled-weight-decay Adam with bias correction.

    Moment buffers are allocated lazily per parameter. The update for each
    parameter at step t is

        m = b1*m + (1-b1)*g          v = b2*v + (1-b2)*g^2
        theta = theta*(1 - lr*wd) - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)

    and is deterministic given identical inputs.
    """

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"AdamW: lr must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"AdamW: betas must lie in [0,1), got {betas}")
        if weight_decay < 0:
            raise ValueError(f"AdamW: weight_decay must be nonnegative, got {weight_decay}")
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, lr: float | None = None) -> None:
        """Apply one update from the gradients currently in the store."""
        lr = self.lr if lr is None else float(lr)
        if lr <= 0:
            raise ValueError(f"AdamW.step: lr must be positive, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.store:
            g = p.grad
            m = self._m.get(p.name)
            if m is None:
                m = self._m[p.name] = np.zeros_like(p.value.data)
                self._v[p.name] = np.zeros_like(p.value.data)
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            # fresh array on purpose: tape closures may still reference the old one
            p.value.data = p.value.data * (1.0 - lr * self.weight_decay) - lr * update
