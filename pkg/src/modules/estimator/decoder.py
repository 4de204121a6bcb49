"""
Compressed attention estimation.

C_perf = FAVOR+(Q, K, V_cat); Z = μ([C_perf ; V]); Ẑ = ν(Z) laid out as a
H·c_h x T x K/c_s image; a three-layer CNN decodes it into Â ∈ [H, T, K]
and two affine heads on Z produce the per-token scalers.
"""
from __future__ import annotations

from typing import TYPE_CHECKING

from src.modules.estimator.weights import EstimatorWeights
from src.modules.performer import FeatureMap, build_v_cat, favor_plus
from src.modules.tensor_core import DenseTensor, DimensionError, ops

if TYPE_CHECKING:
    from src.modules.sea.config import SeaConfig


def _check_inputs(Q: DenseTensor, K: DenseTensor, V: DenseTensor, cfg: SeaConfig) -> None:
    expected = (cfg.H, cfg.T, cfg.d)
    for name, x in (("Q", Q), ("K", K), ("V", V)):
        if x.shape != expected:
            raise DimensionError(f"estimate: {name} has shape {x.shape}, config expects {expected}")


def encode(Q, K, V, w: EstimatorWeights, fm: FeatureMap, cfg: SeaConfig) -> tuple[DenseTensor, DenseTensor]:
    """Return (Ẑ [H·c_h, T, K/c_s], Z) where Z is [H, T, d′] or [T, d′] for concatenated heads."""
    Q, K, V = ops.as_tensor(Q), ops.as_tensor(K), ops.as_tensor(V)
    _check_inputs(Q, K, V, cfg)
    H, T, d = cfg.H, cfg.T, cfg.d
    width = cfg.K // cfg.c_s

    v_cat = build_v_cat(V, w.pos_emb if cfg.causal else None)
    c_perf = favor_plus(Q, K, v_cat, fm, causal=cfg.causal)             # [H, T, 2d]
    v_prime = ops.concat([c_perf, V], axis=-1)                          # [H, T, 3d]

    if cfg.mu_concat_heads:
        flat = ops.reshape(ops.transpose(v_prime, (1, 0, 2)), (T, H * 3 * d))
        z = ops.gelu(w.mu(flat))                                        # [T, d′]
        z_hat = w.nu[1](ops.gelu(w.nu[0](z)))                           # [T, H·K·c_h/c_s]
        z_hat = ops.transpose(ops.reshape(z_hat, (T, H, cfg.c_h, width)), (1, 2, 0, 3))
    else:
        z = ops.gelu(w.mu(v_prime))                                     # [H, T, d′]
        z_hat = w.nu[1](ops.gelu(w.nu[0](z)))                           # [H, T, K·c_h/c_s]
        z_hat = ops.transpose(ops.reshape(z_hat, (H, T, cfg.c_h, width)), (0, 2, 1, 3))
    return ops.reshape(z_hat, (H * cfg.c_h, T, width)), z


def decode(z_hat: DenseTensor, w: EstimatorWeights, cfg: SeaConfig) -> DenseTensor:
    """CNN decoder: Ẑ -> row-stochastic Â [H, T, K]."""
    conv0, conv1, conv2 = w.cnn
    if cfg.causal:
        # height is time: never reduced, taps below the current row dropped
        x = ops.gelu(conv0(z_hat, causal=True))
        x = ops.gelu(conv1(x, causal=True))
        x = ops.nn_interpolate(x, cfg.K, axis=2)
        logits = conv2(x, causal=True)
    else:
        x = ops.gelu(conv0(z_hat, stride=(cfg.c_s, 1)))
        x = ops.gelu(conv1(x))
        x = ops.nn_interpolate(ops.nn_interpolate(x, cfg.T, axis=1), cfg.K, axis=2)
        logits = conv2(x)
    return ops.softmax_lastdim(logits)


def estimate(Q, K, V, w: EstimatorWeights, fm: FeatureMap, cfg: SeaConfig) -> tuple[DenseTensor, DenseTensor]:
    """Compressed attention Â [H, T, K] and the shared hidden state Z."""
    z_hat, z = encode(Q, K, V, w, fm, cfg)
    return decode(z_hat, w, cfg), z


def scalers(z: DenseTensor, w: EstimatorWeights) -> tuple[DenseTensor, DenseTensor]:
    """s_prob = sigmoid(f_prob(Z)), s_mix = sigmoid(f_pool(Z)); shape Z.shape[:-1]."""
    lead = z.shape[:-1]
    s_prob = ops.reshape(ops.sigmoid(w.f_prob(z)), lead)
    s_mix = ops.reshape(ops.sigmoid(w.f_pool(z)), lead)
    return s_prob, s_mix
