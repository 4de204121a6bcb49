"""
Random projection for the positive softmax-kernel features.

The projection is fixed at construction from its seed and never redrawn.
"""
from dataclasses import dataclass

import numpy as np

from src.modules.tensor_core import DenseTensor, DimensionError


def gaussian_projection(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((m, d))


def orthogonal_projection(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Rows orthogonal within blocks of d, rescaled by the norms of fresh Gaussian rows."""
    blocks = []
    full_blocks, remaining = divmod(m, d)
    for _ in range(full_blocks):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        blocks.append(q.T)
    if remaining > 0:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        blocks.append(q.T[:remaining])
    matrix = np.vstack(blocks)
    multiplier = np.linalg.norm(rng.standard_normal((m, d)), axis=1)
    return multiplier[:, None] * matrix


@dataclass(frozen=True)
class FeatureMap:
    projection: DenseTensor   # [m, d], not trainable
    seed: int
    orthogonal: bool = False

    @classmethod
    def create(cls, d: int, m: int, seed: int, orthogonal: bool = False) -> "FeatureMap":
        if d < 1 or m < 1:
            raise DimensionError(f"feature map needs d >= 1 and m >= 1, got d={d}, m={m}")
        rng = np.random.default_rng(seed)
        draw = orthogonal_projection if orthogonal else gaussian_projection
        return cls(projection=DenseTensor(draw(m, d, rng)), seed=seed, orthogonal=orthogonal)

    @property
    def m(self) -> int:
        return self.projection.shape[0]

    @property
    def d(self) -> int:
        return self.projection.shape[1]

    def astype(self, dtype) -> "FeatureMap":
        return FeatureMap(DenseTensor(self.projection.data.astype(dtype)), self.seed, self.orthogonal)
