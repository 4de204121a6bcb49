"""
Dense tensor and gradient tape.

DenseTensor wraps a numpy array in row-major order. Operations whose inputs
require gradients append an entry to the active Tape; `backward(loss)` replays
the tape in reverse and deposits gradients on every requires_grad leaf.

Usage:
    from src.modules.tensor_core import Tape, tensor, ops

    x = tensor([[1.0, 2.0]], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x * x)
        tape.backward(loss)
    x.grad  # -> 2x
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from src.modules.tensor_core.errors import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DenseTensor:
    """n-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.is_leaf = True
        self._tape: Optional[Tape] = None

    # =========================================================================
    # Array protocol
    # =========================================================================

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "DenseTensor":
        return DenseTensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DenseTensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # =========================================================================
    # Operators (delegate to ops)
    # =========================================================================

    def __add__(self, other):
        from src.modules.tensor_core import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from src.modules.tensor_core import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from src.modules.tensor_core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.modules.tensor_core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.modules.tensor_core import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.modules.tensor_core import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from src.modules.tensor_core import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from src.modules.tensor_core import ops
        return ops.div(other, self)

    def __neg__(self):
        from src.modules.tensor_core import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from src.modules.tensor_core import ops
        return ops.matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> DenseTensor:
    """Create a DenseTensor (copies the input)."""
    return DenseTensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


# =============================================================================
# Tape
# =============================================================================

@dataclass
class TapeEntry:
    op: str
    output: DenseTensor
    inputs: tuple[DenseTensor, ...]
    backward: BackwardFn


class Tape:
    """
    Append-only record of differentiable operations.

    A tape is consumed by exactly one backward pass. One tape belongs to one
    thread at a time.
    """

    def __init__(self):
        self._entries: list[TapeEntry] = []
        self._consumed = False
        self._token = None

    @property
    def consumed(self) -> bool:
        return self._consumed

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, entry: TapeEntry) -> None:
        if self._consumed:
            raise ContractError("tape already consumed by a backward pass")
        self._entries.append(entry)

    def backward(self, loss: DenseTensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise ContractError("tape already consumed by a backward pass")
        if not loss.requires_grad:
            raise ContractError("loss is not on the tape (no input requires grad)")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, DenseTensor] = {}
        if loss.is_leaf:
            leaves[id(loss)] = loss

        for entry in reversed(self._entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            for inp, gi in zip(entry.inputs, entry.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
                if inp.is_leaf:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = grads[key].astype(leaf.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g

        self._entries.clear()
        self._consumed = True


_active_tape: ContextVar[Optional[Tape]] = ContextVar("active_tape", default=None)
_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)
_thread_state = threading.local()


def current_tape() -> Tape:
    """The explicitly entered tape, or this thread's default tape."""
    tape = _active_tape.get()
    if tape is not None:
        return tape
    tape = getattr(_thread_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _thread_state.tape = tape
    return tape


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def backward(loss: DenseTensor) -> None:
    """Replay the tape that recorded `loss` and fill leaf gradients."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss is not on a tape")
    loss._tape.backward(loss)
