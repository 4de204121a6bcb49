"""
Structural hyperparameters of one SEA attention layer.
"""
import dataclasses
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from src.modules.mask.modes import TopKMode
from src.modules.tensor_core import ConfigValidationError

_PRECISIONS = {"f64": np.float64, "f32": np.float32}


@dataclass(frozen=True)
class SeaConfig:
    T: int                 # sequence length
    K: int                 # compressed key length
    k: int                 # per-row nonzero budget of the full mask
    d: int                 # head dimension
    H: int                 # number of heads
    d_hidden: int = 64     # d′, shared hidden size of μ and ν
    c_s: int = 2           # width reduction
    c_h: int = 4           # channel expansion
    m: int = 64            # random feature count
    mode: TopKMode = TopKMode.PER_QUERY
    causal: bool = False
    precision: str = "f64"
    orthogonal: bool = False
    mu_concat_heads: bool = False

    @classmethod
    def create(cls, mode: "Optional[str | TopKMode]" = None, **fields: Any) -> "SeaConfig":
        """Build and validate; an unset mode defaults to CausalPerBatch for causal configs."""
        causal = bool(fields.get("causal", False))
        try:
            parsed = TopKMode.parse(mode) if mode is not None else (
                TopKMode.CAUSAL_PER_BATCH if causal else TopKMode.PER_QUERY)
        except ValueError as e:
            raise ConfigValidationError(str(e)) from None
        cfg = cls(mode=parsed, **fields)
        cfg.validate()
        return cfg

    def replace(self, **changes: Any) -> "SeaConfig":
        if "mode" in changes and changes["mode"] is not None:
            changes["mode"] = TopKMode.parse(changes["mode"])
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("T", "K", "k", "d", "H", "d_hidden", "c_s", "c_h", "m"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.K % self.c_s != 0:
            raise ConfigValidationError(f"K={self.K} is not divisible by the width reduction c_s={self.c_s}")
        if self.k > self.T:
            raise ConfigValidationError(f"k={self.k} exceeds the sequence length T={self.T}")
        if self.K > self.T:
            raise ConfigValidationError(f"K={self.K} exceeds the sequence length T={self.T}")
        if self.precision not in _PRECISIONS:
            raise ConfigValidationError(f"precision must be one of {sorted(_PRECISIONS)}, got {self.precision!r}")
        if self.causal and self.mode not in (TopKMode.CAUSAL_PER_BATCH, TopKMode.PER_QUERY):
            raise ConfigValidationError(
                f"top-k mode {self.mode.value} exchanges information across time and cannot be causal")

    def validate_k(self, k: int) -> int:
        """Runtime budget check for dynamic-k evaluation."""
        if k < 1 or k > self.T:
            raise ConfigValidationError(f"k={k} must lie in [1, T={self.T}]")
        return int(k)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_PRECISIONS[self.precision])

    @property
    def nu_width(self) -> int:
        """Output width of ν per head: K·c_h/c_s."""
        return self.K * self.c_h // self.c_s

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["mode"] = self.mode.value
        return out
