"""
Toy transformer, copy-task data and the SEA student.

The teacher is a small pre-norm transformer with quadratic attention. The
student copies its backbone and replaces every attention with a SEA layer
(dense emulation while training, the sparse engine at evaluation).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.modules.reference_oracle import dense_emulation, dense_probs
from src.modules.sea import SeaConfig, SeaWeights, sea_forward
from src.modules.tensor_core import ConfigValidationError, DenseTensor, StructuralError, no_grad, ops

NORM_EPS = 1e-6


@dataclass(frozen=True)
class ToyConfig:
    vocab: int = 16
    T: int = 32
    H: int = 2
    d: int = 16
    n_layers: int = 2
    causal: bool = True

    @property
    def width(self) -> int:
        return self.H * self.d

    def as_dict(self) -> dict:
        return {"vocab": self.vocab, "T": self.T, "H": self.H, "d": self.d,
                "n_layers": self.n_layers, "causal": self.causal}


# =============================================================================
# Data
# =============================================================================

@dataclass
class CopyBatch:
    tokens: np.ndarray      # int [B, T]
    targets: np.ndarray     # int [B, T], next token
    loss_mask: np.ndarray   # bool [B, T], positions whose target is determined


def copy_task_batch(rng: np.random.Generator, batch: int, T: int, vocab: int) -> CopyBatch:
    """The second half of every sequence repeats the first; predict the next token."""
    if T < 4 or T % 2:
        raise ConfigValidationError(f"copy task needs an even T >= 4, got {T}")
    half = T // 2
    first = rng.integers(0, vocab, size=(batch, half))
    tokens = np.concatenate([first, first], axis=1)
    targets = np.zeros_like(tokens)
    targets[:, :-1] = tokens[:, 1:]
    loss_mask = np.zeros(tokens.shape, dtype=bool)
    loss_mask[:, half - 1:T - 1] = True
    return CopyBatch(tokens, targets, loss_mask)


# =============================================================================
# Backbone
# =============================================================================

@dataclass
class Trace:
    """Per-layer activations of one forward pass."""
    attn: list = field(default_factory=list)       # Ã_i or Â_i
    context: list = field(default_factory=list)    # [.., H, T, d]
    q: list = field(default_factory=list)
    k: list = field(default_factory=list)
    outputs: list = field(default_factory=list)    # O_i, [.., T, H*d]
    logits: Optional[DenseTensor] = None
    diagnostics: list = field(default_factory=list)   # sparse student runs only


def rms_norm(x: DenseTensor) -> DenseTensor:
    ms = ops.mean(ops.mul(x, x), axis=-1, keepdims=True)
    return ops.div(x, ops.sqrt(ops.add(ms, NORM_EPS)))


class ToyTransformer:
    """Pre-norm transformer over one-hot tokens; parameters kept in a flat named dict."""

    def __init__(self, cfg: ToyConfig, params: dict[str, DenseTensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ToyConfig, seed: int = 0) -> "ToyTransformer":
        rng = np.random.default_rng([seed, 7])
        D, V = cfg.width, cfg.vocab

        def normal(shape, scale):
            return DenseTensor(scale * rng.standard_normal(shape), requires_grad=True)

        def zeros(shape):
            return DenseTensor(np.zeros(shape), requires_grad=True)

        params = {"embed": normal((V, D), 1.0), "pos": normal((cfg.T, D), 1.0)}
        for i in range(cfg.n_layers):
            for name in ("wq", "wk", "wv", "wo"):
                params[f"layers.{i}.{name}"] = normal((D, D), D ** -0.5)
            params[f"layers.{i}.mlp.w1"] = normal((D, 2 * D), D ** -0.5)
            params[f"layers.{i}.mlp.b1"] = zeros(2 * D)
            params[f"layers.{i}.mlp.w2"] = normal((2 * D, D), (2 * D) ** -0.5)
            params[f"layers.{i}.mlp.b2"] = zeros(D)
        params["head.w"] = normal((D, V), D ** -0.5)
        params["head.b"] = zeros(V)
        return cls(cfg, params)

    @classmethod
    def from_named(cls, cfg: ToyConfig, named: dict[str, np.ndarray], prefix: str = "") -> "ToyTransformer":
        reference = cls.init(cfg)
        params = {}
        for name, value in reference.params.items():
            key = f"{prefix}{name}"
            if key not in named:
                raise StructuralError(f"weights file is missing '{key}'")
            arr = np.asarray(named[key], dtype=np.float64)
            if arr.shape != value.shape:
                raise StructuralError(f"'{key}' has shape {arr.shape}, expected {value.shape}")
            params[name] = DenseTensor(arr.copy(), requires_grad=True)
        return cls(cfg, params)

    def clone(self) -> "ToyTransformer":
        return ToyTransformer(self.cfg, {n: DenseTensor(p.data.copy(), requires_grad=True)
                                         for n, p in self.params.items()})

    def named_parameters(self, prefix: str = "") -> dict[str, DenseTensor]:
        return {f"{prefix}{n}": p for n, p in self.params.items()}

    # =========================================================================
    # Pieces shared with the student
    # =========================================================================

    def embed(self, tokens: np.ndarray) -> DenseTensor:
        one_hot = np.eye(self.cfg.vocab)[np.asarray(tokens)]
        return ops.add(ops.matmul(one_hot, self.params["embed"]), self.params["pos"])

    def split_heads(self, x: DenseTensor) -> DenseTensor:
        lead, T = x.shape[:-2], x.shape[-2]
        n = len(lead)
        x = ops.reshape(x, lead + (T, self.cfg.H, self.cfg.d))
        return ops.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))

    def merge_heads(self, x: DenseTensor) -> DenseTensor:
        lead, T = x.shape[:-3], x.shape[-2]
        n = len(lead)
        x = ops.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
        return ops.reshape(x, lead + (T, self.cfg.width))

    def qkv(self, i: int, x: DenseTensor) -> tuple[DenseTensor, DenseTensor, DenseTensor]:
        h = rms_norm(x)
        p = self.params
        return tuple(self.split_heads(ops.matmul(h, p[f"layers.{i}.{w}"])) for w in ("wq", "wk", "wv"))

    def finish_layer(self, i: int, x: DenseTensor, context: DenseTensor) -> DenseTensor:
        p = self.params
        h = ops.add(x, ops.matmul(self.merge_heads(context), p[f"layers.{i}.wo"]))
        hidden = ops.gelu(ops.linear(rms_norm(h), p[f"layers.{i}.mlp.w1"], p[f"layers.{i}.mlp.b1"]))
        return ops.add(h, ops.linear(hidden, p[f"layers.{i}.mlp.w2"], p[f"layers.{i}.mlp.b2"]))

    def head(self, x: DenseTensor) -> DenseTensor:
        return ops.linear(rms_norm(x), self.params["head.w"], self.params["head.b"])

    def forward(self, tokens: np.ndarray) -> Trace:
        """Quadratic attention forward over tokens [T] or [B, T]."""
        trace = Trace()
        x = self.embed(tokens)
        for i in range(self.cfg.n_layers):
            q, k, v = self.qkv(i, x)
            attn = dense_probs(q, k, causal=self.cfg.causal)
            context = ops.matmul(attn, v)
            x = self.finish_layer(i, x, context)
            trace.attn.append(attn)
            trace.context.append(context)
            trace.q.append(q)
            trace.k.append(k)
            trace.outputs.append(x)
        trace.logits = self.head(x)
        return trace


# =============================================================================
# Student
# =============================================================================

class SeaStudent:
    """Teacher backbone with every attention replaced by a SEA layer."""

    def __init__(self, backbone: ToyTransformer, sea: list[SeaWeights], sea_cfg: SeaConfig):
        if sea_cfg.T != backbone.cfg.T or sea_cfg.H != backbone.cfg.H or sea_cfg.d != backbone.cfg.d:
            raise ConfigValidationError(
                f"SEA config (T={sea_cfg.T}, H={sea_cfg.H}, d={sea_cfg.d}) does not fit the backbone "
                f"(T={backbone.cfg.T}, H={backbone.cfg.H}, d={backbone.cfg.d})")
        if sea_cfg.causal != backbone.cfg.causal:
            raise ConfigValidationError("SEA and backbone disagree on causality")
        self.backbone = backbone
        self.sea = sea
        self.sea_cfg = sea_cfg

    @classmethod
    def from_teacher(cls, teacher: ToyTransformer, sea_cfg: SeaConfig, seed: int = 0) -> "SeaStudent":
        layers = [SeaWeights.init(sea_cfg, seed=seed * 100 + i) for i in range(teacher.cfg.n_layers)]
        return cls(teacher.clone(), layers, sea_cfg)

    def sea_parameters(self) -> list[DenseTensor]:
        return [p for layer in self.sea for p in layer.trainable()]

    def backbone_parameters(self) -> list[DenseTensor]:
        return list(self.backbone.params.values())

    def named_parameters(self, prefix: str = "") -> dict[str, DenseTensor]:
        named = self.backbone.named_parameters(f"{prefix}backbone.")
        for i, layer in enumerate(self.sea):
            named.update(layer.named_parameters(f"{prefix}sea.{i}."))
        return named

    @classmethod
    def from_named(cls, toy_cfg: ToyConfig, sea_cfg: SeaConfig, named: dict[str, np.ndarray],
                   prefix: str = "") -> "SeaStudent":
        backbone = ToyTransformer.from_named(toy_cfg, named, f"{prefix}backbone.")
        layers = [SeaWeights.from_named(named, f"{prefix}sea.{i}.", orthogonal=sea_cfg.orthogonal)
                  for i in range(toy_cfg.n_layers)]
        return cls(backbone, layers, sea_cfg)

    def forward(self, tokens: np.ndarray, k: Optional[int] = None, sparse: bool = False) -> Trace:
        """
        Forward one sequence tokens [T].

        The default dense emulation is differentiable; `sparse` runs the
        FlatCSR engine and records nothing on the tape.
        """
        trace = Trace()
        if sparse:
            with no_grad():
                return self._forward(tokens, k, sparse, trace)
        return self._forward(tokens, k, sparse, trace)

    def _forward(self, tokens: np.ndarray, k: Optional[int], sparse: bool, trace: Trace) -> Trace:
        bb = self.backbone
        x = bb.embed(tokens)
        for i in range(bb.cfg.n_layers):
            q, kk, v = bb.qkv(i, x)
            if sparse:
                out = sea_forward(q, kk, v, self.sea[i], self.sea_cfg, k=k, diagnostics=True)
                a_hat = DenseTensor(out.diagnostics["a_hat"])
                trace.diagnostics.append(out.diagnostics)
            else:
                out = dense_emulation(q, kk, v, self.sea[i], self.sea_cfg, k=k, diagnostics=True)
                a_hat = out.diagnostics["a_hat"]
            x = bb.finish_layer(i, x, out.c_sea)
            trace.attn.append(a_hat)
            trace.context.append(out.c_sea)
            trace.q.append(q)
            trace.k.append(kk)
            trace.outputs.append(x)
        trace.logits = bb.head(x)
        return trace
