"""
Parameter-group optimizers working in place on DenseTensor data.
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.modules.tensor_core import ConfigValidationError, DenseTensor


@dataclass
class ParamGroup:
    params: list[DenseTensor]
    lr: float


class SGD:
    """Plain gradient descent, no momentum."""

    def __init__(self, groups: Sequence[ParamGroup]):
        self.groups = list(groups)

    def step(self) -> None:
        for group in self.groups:
            for p in group.params:
                if p.grad is not None:
                    p.data -= group.lr * p.grad

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.zero_grad()


@dataclass
class _AdamState:
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam(SGD):
    def __init__(self, groups: Sequence[ParamGroup], betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(groups)
        self.betas = betas
        self.eps = eps
        self._state = _AdamState()

    def step(self) -> None:
        b1, b2 = self.betas
        state = self._state
        state.t += 1
        c1 = 1.0 - b1 ** state.t
        c2 = 1.0 - b2 ** state.t
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    continue
                key = id(p)
                m = state.m.setdefault(key, np.zeros_like(p.data))
                v = state.v.setdefault(key, np.zeros_like(p.data))
                m *= b1
                m += (1.0 - b1) * p.grad
                v *= b2
                v += (1.0 - b2) * p.grad ** 2
                p.data -= group.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, groups: Sequence[ParamGroup]) -> SGD:
    name = name.lower()
    if name == "sgd":
        return SGD(groups)
    if name == "adam":
        return Adam(groups)
    raise ConfigValidationError(f"Unknown optimizer: {name!r} (expected 'sgd' or 'adam')")
