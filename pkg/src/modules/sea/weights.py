"""
All parameters of one SEA attention layer: the fixed Performer projection
plus the learnable estimator.
"""
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from src.modules.estimator import EstimatorWeights
from src.modules.performer import FeatureMap
from src.modules.sea.config import SeaConfig
from src.modules.tensor_core import DenseTensor, StructuralError


@dataclass
class SeaWeights:
    feature_map: FeatureMap
    estimator: EstimatorWeights

    @classmethod
    def init(cls, cfg: SeaConfig, seed: int = 0) -> "SeaWeights":
        fm = FeatureMap.create(cfg.d, cfg.m, seed=seed, orthogonal=cfg.orthogonal).astype(cfg.dtype)
        est = EstimatorWeights.init(cfg, np.random.default_rng([seed, 1]))
        return cls(fm, est)

    def named_parameters(self, prefix: str = "") -> dict[str, DenseTensor]:
        """Every tensor, projection included, under its weights-file name."""
        named = {f"{prefix}performer.projection": self.feature_map.projection}
        named.update(self.estimator.named_parameters(f"{prefix}estimator"))
        return named

    def trainable(self) -> list[DenseTensor]:
        return list(self.estimator.named_parameters().values())

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray], prefix: str = "", seed: int = 0,
                   orthogonal: bool = False, dtype=np.float64) -> "SeaWeights":
        key = f"{prefix}performer.projection"
        if key not in named:
            raise StructuralError(f"weights file is missing '{key}'")
        fm = FeatureMap(DenseTensor(np.asarray(named[key], dtype=dtype).copy()), seed, orthogonal)
        return cls(fm, EstimatorWeights.from_named(named, f"{prefix}estimator", dtype=dtype))

    def astype(self, dtype) -> "SeaWeights":
        if self.feature_map.projection.dtype == dtype:
            return self
        named = {name: t.data for name, t in self.named_parameters().items()}
        return SeaWeights.from_named(named, seed=self.feature_map.seed,
                                     orthogonal=self.feature_map.orthogonal, dtype=dtype)
