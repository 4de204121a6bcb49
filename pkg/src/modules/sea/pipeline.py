"""
The SEA attention layer, test-time path.

estimate -> scalers -> compress_k -> grouped_topk -> interpolate_mask
-> sparse_masked_qk -> sparse_row_softmax -> scale_rows -> spmm -> mix
"""
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator, Optional, Union

import numpy as np

from src.modules.estimator import estimate, scalers
from src.modules.flatcsr import scale_rows, sparse_masked_qk, sparse_row_softmax, spmm
from src.modules.mask import compress_k, grouped_topk, interpolate_mask
from src.modules.sea.config import SeaConfig
from src.modules.sea.weights import SeaWeights
from src.modules.tensor_core import DenseTensor, StageError, no_grad, ops
from src.utils.counters import stage
from src.utils.logger import get_logger

logger = get_logger("sea")

Forced = Optional[Union[float, np.ndarray]]


@dataclass
class SeaOutput:
    c_sea: DenseTensor                          # [H, T, d]
    diagnostics: Optional[dict[str, Any]] = None


@contextmanager
def pipeline_stage(name: str) -> Iterator[None]:
    """Count work under `name` and report failures as StageError(name)."""
    with stage(name):
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            logger.debug(f"stage {name} failed: {type(e).__name__}: {e}")
            raise StageError(name, e) from e


def importance(a_hat, T: int) -> DenseTensor:
    """Token importance i [..., T]: row average of Â resized to T and renormalized to sum 1."""
    a_hat = ops.as_tensor(a_hat)
    i_hat = ops.mean(a_hat, axis=-2)                                    # [..., K]
    i = ops.nn_interpolate(i_hat, T, axis=-1)
    return ops.div(i, ops.sum(i, axis=-1, keepdims=True))


def global_context(a_hat, V, causal: bool) -> DenseTensor:
    """
    C_avg: bidirectional i^T V as [H, 1, d] (broadcast over rows when mixing);
    causal prefix averages (1/j) sum_{i<=j} V_i as [H, T, d].
    """
    V = ops.as_tensor(V)
    T = V.shape[-2]
    if causal:
        counts = np.arange(1, T + 1, dtype=V.dtype)[:, None]
        return ops.div(ops.cumsum(V, axis=-2), counts)
    i = importance(a_hat, T)
    return ops.matmul(ops.reshape(i, i.shape[:-1] + (1, T)), V)


def mix(c: DenseTensor, c_avg: DenseTensor, s_mix: DenseTensor) -> DenseTensor:
    """s_mix ⊙ C + (1 - s_mix) ⊙ C_avg with s_mix broadcast over the feature axis."""
    gate = ops.reshape(s_mix, s_mix.shape + (1,))
    return ops.add(ops.mul(gate, c), ops.mul(ops.sub(1.0, gate), c_avg))


def _forced(value: Forced, like: DenseTensor) -> DenseTensor:
    return DenseTensor(np.broadcast_to(np.asarray(value, dtype=like.dtype), like.shape).copy())


def sea_forward(Q, K, V, weights: SeaWeights, cfg: SeaConfig, *, k: Optional[int] = None,
                diagnostics: bool = False, force_s_prob: Forced = None,
                force_s_mix: Forced = None) -> SeaOutput:
    """
    Sparse attention for Q, K, V [H, T, d].

    `k` overrides the configured budget at run time (dynamic-k). The forced
    scalers replace the learned s_prob / s_mix.
    """
    k = cfg.k if k is None else cfg.validate_k(k)
    dtype = cfg.dtype
    Q, K, V = (DenseTensor(np.asarray(ops.as_tensor(x).data, dtype=dtype)) for x in (Q, K, V))
    weights = weights.astype(dtype)

    with no_grad():
        with pipeline_stage("estimator"):
            a_hat, z = estimate(Q, K, V, weights.estimator, weights.feature_map, cfg)
            s_prob, s_mix = scalers(z, weights.estimator)
            if force_s_prob is not None:
                s_prob = _forced(force_s_prob, s_prob)
            if force_s_mix is not None:
                s_mix = _forced(force_s_mix, s_mix)
        logger.debug(f"estimator: a_hat {a_hat.shape}, z {z.shape}")

        with pipeline_stage("mask"):
            k_hat = compress_k(k, cfg.K, cfg.T)
            m_hat = grouped_topk(a_hat, cfg.mode, k_hat)
            m_star = interpolate_mask(m_hat, cfg.T, k, cfg.causal)
        logger.debug(f"mask: k={k}, k_hat={k_hat}, mode={cfg.mode.value}, nnz={m_star.nnz}")

        with pipeline_stage("sparse"):
            scores = sparse_masked_qk(Q, K, m_star)
            a_star = scale_rows(sparse_row_softmax(scores), s_prob)
            c = spmm(a_star, V)
        logger.debug(f"sparse: {a_star.nnz} stored probabilities")

        with pipeline_stage("mix"):
            c_avg = global_context(a_hat, V, cfg.causal)
            c_sea = mix(c, c_avg, s_mix)

    diag = None
    if diagnostics:
        diag = {
            "a_hat": a_hat.data,
            "m_hat": m_hat.m_hat,
            "k_hat": k_hat,
            "mask": m_star,
            "a_star": a_star,
            "s_prob": s_prob.data,
            "s_mix": s_mix.data,
            "c": c.data,
            "c_avg": c_avg.data,
            "i": None if cfg.causal else importance(a_hat, cfg.T).data,
        }
    return SeaOutput(c_sea, diag)
