"""Named parameters with gradient buffers, held in an ordered store."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, default_dtype


class Parameter:
    """A named value tensor plus a gradient buffer of identical shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: Tensor):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value.data)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParamStore:
    """Insertion-ordered map of unique parameter names to parameters.

    All random initialization draws from one seeded generator in creation
    order, so a store built twice from the same seed is bit-identical.
    """

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, Tensor(values))
        self._params[name] = p
        return p

    def glorot(self, name: str, fan_in: int, fan_out: int, shape=None) -> Parameter:
        """Uniform(+-sqrt(6/(fan_in+fan_out))) initialization."""
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        vals = self.rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
        return self.add(name, vals)

    def zeros(self, name: str, shape) -> Parameter:
        return self.add(name, np.zeros(shape, dtype=default_dtype()))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(p.value.size for p in self)

    def zero_grad(self) -> None:
        for p in self:
            p.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values; names and shapes must match exactly."""
        missing = [n for n in self.names() if n not in state]
        extra = [n for n in state if n not in self]
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={missing} extra={extra}")
        for p in self:
            arr = np.asarray(state[p.name], dtype=default_dtype())
            if arr.shape != p.value.shape:
                raise ValueError(
                    f"shape mismatch for {p.name!r}: stored {arr.shape}, model {p.value.shape}"
                )
            p.value.data = np.ascontiguousarray(arr)
            p.grad = np.zeros_like(p.value.data)
