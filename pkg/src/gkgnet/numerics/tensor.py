"""Dense tensors and global precision control.

A Tensor is a thin wrapper over a contiguous row-major numpy float array.
The default dtype is float64; training runs may switch to float32 (the
checkpoint storage format), while gradient checking requires float64.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}

_default = [np.float64]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(RuntimeError):
    """A computation produced or encountered a non-finite value."""


def _as_dtype(dtype) -> type:
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ValueError(f"unknown precision {dtype!r}: expected 'f32' or 'f64'")
        return _DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt.type not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}: expected float32 or float64")
    return dt.type


def default_dtype():
    """Current default floating dtype for newly created tensors."""
    return _default[0]


def set_default_dtype(dtype) -> None:
    _default[0] = _as_dtype(dtype)


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype ('f32' or 'f64')."""
    old = _default[0]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default[0] = old


class Tensor:
    """Dense row-major float array, the value type all primitives use.

    The two private fields tie a tensor to the tape that last saw it; they
    are managed by the tape and never touched elsewhere.
    """

    __slots__ = ("data", "_tape_token", "_tid")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.data = np.ascontiguousarray(arr)
        self._tape_token = -1
        self._tid = -1

    @staticmethod
    def wrap(arr: np.ndarray) -> "Tensor":
        """Wrap an array without casting; used by ops to keep input dtype."""
        t = Tensor.__new__(Tensor)
        t.data = arr
        t._tape_token = -1
        t._tid = -1
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor.wrap(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def constant(data, dtype=None) -> Tensor:
    """Tensor holding fixed values (targets, extracted patches, masks)."""
    return Tensor(data, dtype=dtype)
