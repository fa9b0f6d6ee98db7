"""Tensor arithmetic, tape-based reverse-mode gradients, optimizer, oracle."""

from . import ops
from .gradcheck import GradCheckResult, finite_difference_gradcheck
from .optim import AdamW
from .params import Parameter, ParamStore
from .tape import GradMap, Tape, active_tape, backward
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    constant,
    default_dtype,
    set_default_dtype,
    using_dtype,
)

__all__ = [
    "AdamW",
    "GradCheckResult",
    "GradMap",
    "NumericError",
    "Parameter",
    "ParamStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "constant",
    "default_dtype",
    "finite_difference_gradcheck",
    "ops",
    "set_default_dtype",
    "using_dtype",
]
