"""
Learnable parameters of the attention estimator.

Naming inside a weights file:
    estimator.mu.{weight,bias}
    estimator.nu.{0,1}.{weight,bias}
    estimator.cnn.{0,1,2}.{weight,bias}
    estimator.f_prob.{weight,bias}
    estimator.f_pool.{weight,bias}
    estimator.pos_emb                  (causal configs only)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Mapping, Optional

import numpy as np

from src.modules.tensor_core import DenseTensor, StructuralError, ops

if TYPE_CHECKING:
    from src.modules.sea.config import SeaConfig


@dataclass
class Linear:
    weight: DenseTensor   # [in, out]
    bias: DenseTensor     # [out]

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> "Linear":
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        return cls(DenseTensor(w.astype(dtype), requires_grad=True),
                   DenseTensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))

    def __call__(self, x) -> DenseTensor:
        return ops.linear(x, self.weight, self.bias)

    def parameters(self) -> Iterator[tuple[str, DenseTensor]]:
        yield "weight", self.weight
        yield "bias", self.bias


@dataclass
class Conv:
    weight: DenseTensor   # [out, in, 3, 3]
    bias: DenseTensor     # [out]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, dtype) -> "Conv":
        w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(9 * c_in)
        return cls(DenseTensor(w.astype(dtype), requires_grad=True),
                   DenseTensor(np.zeros(c_out, dtype=dtype), requires_grad=True))

    def __call__(self, x, stride=1, causal: bool = False) -> DenseTensor:
        return ops.conv2d(x, self.weight, self.bias, stride=stride, causal=causal)

    def parameters(self) -> Iterator[tuple[str, DenseTensor]]:
        yield "weight", self.weight
        yield "bias", self.bias


@dataclass
class EstimatorWeights:
    mu: Linear
    nu: tuple[Linear, Linear]
    cnn: tuple[Conv, Conv, Conv]
    f_prob: Linear
    f_pool: Linear
    pos_emb: Optional[DenseTensor] = None

    @classmethod
    def init(cls, cfg: SeaConfig, rng: np.random.Generator) -> "EstimatorWeights":
        dtype = cfg.dtype
        heads_in = cfg.H if cfg.mu_concat_heads else 1
        channels = cfg.H * cfg.c_h
        pos_emb = None
        if cfg.causal:
            pos_emb = DenseTensor((0.1 * rng.standard_normal((cfg.T, cfg.d))).astype(dtype), requires_grad=True)
        return cls(
            mu=Linear.init(heads_in * 3 * cfg.d, cfg.d_hidden, rng, dtype),
            nu=(Linear.init(cfg.d_hidden, cfg.d_hidden, rng, dtype),
                Linear.init(cfg.d_hidden, heads_in * cfg.nu_width, rng, dtype)),
            cnn=(Conv.init(channels, channels, rng, dtype),
                 Conv.init(channels, channels, rng, dtype),
                 Conv.init(channels, cfg.H, rng, dtype)),
            f_prob=Linear.init(cfg.d_hidden, 1, rng, dtype),
            f_pool=Linear.init(cfg.d_hidden, 1, rng, dtype),
            pos_emb=pos_emb,
        )

    def named_parameters(self, prefix: str = "estimator") -> dict[str, DenseTensor]:
        named: dict[str, DenseTensor] = {}
        layers = [("mu", self.mu), ("nu.0", self.nu[0]), ("nu.1", self.nu[1]),
                  ("cnn.0", self.cnn[0]), ("cnn.1", self.cnn[1]), ("cnn.2", self.cnn[2]),
                  ("f_prob", self.f_prob), ("f_pool", self.f_pool)]
        for layer_name, layer in layers:
            for param_name, value in layer.parameters():
                named[f"{prefix}.{layer_name}.{param_name}"] = value
        if self.pos_emb is not None:
            named[f"{prefix}.pos_emb"] = self.pos_emb
        return named

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray], prefix: str = "estimator",
                   dtype=np.float64, requires_grad: bool = True) -> "EstimatorWeights":
        def t(name: str) -> DenseTensor:
            key = f"{prefix}.{name}"
            if key not in named:
                raise StructuralError(f"weights file is missing '{key}'")
            return DenseTensor(np.asarray(named[key], dtype=dtype).copy(), requires_grad=requires_grad)

        def lin(name: str) -> Linear:
            return Linear(t(f"{name}.weight"), t(f"{name}.bias"))

        def conv(name: str) -> Conv:
            return Conv(t(f"{name}.weight"), t(f"{name}.bias"))

        pos_key = f"{prefix}.pos_emb"
        return cls(
            mu=lin("mu"),
            nu=(lin("nu.0"), lin("nu.1")),
            cnn=(conv("cnn.0"), conv("cnn.1"), conv("cnn.2")),
            f_prob=lin("f_prob"),
            f_pool=lin("f_pool"),
            pos_emb=t("pos_emb") if pos_key in named else None,
        )
