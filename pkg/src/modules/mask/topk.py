"""
Compressed mask generation: k -> k̂ conversion and grouped top-k̂ selection.
"""
from dataclasses import dataclass

import numpy as np

from src.modules.mask.modes import TopKMode
from src.modules.tensor_core import ConfigValidationError, DenseTensor, DimensionError


def compress_k(k: int, K: int, T: int) -> int:
    """max(1, round(k*K/T)) with halves rounded away from zero, in integer arithmetic."""
    if k < 1 or K < 1 or T < 1:
        raise ConfigValidationError(f"compress_k needs positive arguments, got k={k}, K={K}, T={T}")
    return max(1, (2 * k * K + T) // (2 * T))


@dataclass(frozen=True, eq=False)
class CompressedMask:
    m_hat: np.ndarray        # bool [H, T, K]
    mode: TopKMode
    k_hat: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.m_hat.shape

    def groups(self) -> np.ndarray:
        """The mask viewed as [n_groups, group_size] for this mode."""
        return _grouped_view(self.m_hat, self.mode)

    def group_budget(self) -> int:
        H, T, _ = self.m_hat.shape
        return min(self.k_hat * self.mode.budget_factor(T, H), self.groups().shape[1])


def _grouped_view(x: np.ndarray, mode: TopKMode) -> np.ndarray:
    H, T, K = x.shape
    if mode is TopKMode.PER_QUERY:
        return x.reshape(H * T, K)
    if mode is TopKMode.PER_HEAD:
        return x.reshape(H, T * K)
    if mode is TopKMode.PER_BATCH:
        return x.reshape(1, H * T * K)
    return x.transpose(1, 0, 2).reshape(T, H * K)


def _ungroup(grouped: np.ndarray, mode: TopKMode, shape: tuple[int, int, int]) -> np.ndarray:
    H, T, K = shape
    if mode is TopKMode.CAUSAL_PER_BATCH:
        return grouped.reshape(T, H, K).transpose(1, 0, 2)
    return grouped.reshape(H, T, K)


def grouped_topk(a_hat, mode: TopKMode, k_hat: int) -> CompressedMask:
    """
    Mark the min(budget, group size) largest entries of every group.

    Ties go to the lowest flat index within the group.
    """
    values = a_hat.data if isinstance(a_hat, DenseTensor) else np.asarray(a_hat)
    if values.ndim != 3:
        raise DimensionError(f"grouped_topk expects [H, T, K], got {values.shape}")
    if k_hat < 1:
        raise ConfigValidationError(f"k_hat must be >= 1, got {k_hat}")
    mode = TopKMode.parse(mode)
    H, T, _ = values.shape

    grouped = _grouped_view(values, mode)
    n_groups, size = grouped.shape
    budget = min(k_hat * mode.budget_factor(T, H), size)
    order = np.argsort(-grouped, axis=1, kind="stable")[:, :budget]
    selected = np.zeros((n_groups, size), dtype=bool)
    selected[np.arange(n_groups)[:, None], order] = True
    return CompressedMask(_ungroup(selected, mode, values.shape), mode, k_hat)
