"""Reverse-mode autodiff tape.

Every primitive application appends one node holding the ids of its input
tensors, the id of its output, and a closure mapping the output cotangent to
input cotangents (a vector-Jacobian product). Output ids are always created
after the ids they consume, so a single reversed walk over the records visits
nodes in reverse topological order, and gradients accumulate additively across
fan-out.

Tapes nest per thread; tensors carry a (token, id) pair identifying their slot
on the tape that last registered them, which lets long-lived tensors (model
parameters) participate in many tapes without cross-talk.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tensor

_token_counter = itertools.count(1)
_tls = threading.local()


def _stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_tape():
    """The innermost tape on this thread, or None when recording is off."""
    stack = _stack()
    return stack[-1] if stack else None


class TapeNode:
    __slots__ = ("out_id", "in_ids", "vjp")

    def __init__(self, out_id: int, in_ids: tuple, vjp: Callable):
        self.out_id = out_id
        self.in_ids = in_ids
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.token = next(_token_counter)
        self.records: list[TapeNode] = []
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _fresh_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def ensure_id(self, t: Tensor) -> int:
        """Register a tensor as a leaf on this tape if not yet seen."""
        if t._tape_token != self.token:
            t._tape_token = self.token
            t._tid = self._fresh_id()
        return t._tid

    def record(self, inputs: tuple, out: Tensor, vjp: Callable) -> None:
        in_ids = tuple(self.ensure_id(x) for x in inputs)
        out._tape_token = self.token
        out._tid = self._fresh_id()
        self.records.append(TapeNode(out._tid, in_ids, vjp))


class GradMap:
    """Gradients from one backward pass, resolved through tensors."""

    def __init__(self, token: int, grads: dict):
        self._token = token
        self._grads = grads

    def of(self, t: Tensor):
        """Gradient array for a tensor, or None if it never fed the loss."""
        if t._tape_token != self._token:
            return None
        return self._grads.get(t._tid)


def backward(tape: Tape, loss: Tensor, store: ParamStore | None = None) -> GradMap:
    """Accumulate d(loss)/d(leaf) for every leaf feeding a scalar loss.

    When a store is given, each parameter's grad buffer is incremented by the
    gradient of its value tensor (call store.zero_grad() first for fresh
    gradients). Index selections made during the forward pass (graph
    neighbors, argmax routing) were saved as constants and are not
    differentiated through.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss_id = tape.ensure_id(loss)
    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = grads.pop(node.out_id, None)
        if g is None:
            continue  # dead branch: output never influenced the loss
        parts = node.vjp(g)
        for tid, part in zip(node.in_ids, parts):
            if part is None:
                continue
            acc = grads.get(tid)
            # out-of-place accumulation: stored arrays may alias vjp outputs
            grads[tid] = part if acc is None else acc + part
    if store is not None:
        for p in store:
            v = p.value
            if v._tape_token == tape.token:
                g = grads.get(v._tid)
                if g is not None:
                    p.grad += g
    return GradMap(tape.token, grads)
