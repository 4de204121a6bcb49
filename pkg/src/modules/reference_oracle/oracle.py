"""
Dense quadratic ground truth.

dense_attention materializes softmax(QK^T/sqrt(d))V. dense_emulation reruns
the SEA layer with the estimator shared but every sparse stage re-derived on
dense [H, T, T] tensors: every row of the compressed mask is resized
through its own dense paint matrix, attention uses a masked dense softmax.
It is differentiable and serves as the train-time path.
"""
import math
from typing import Optional

import numpy as np

from src.modules.estimator import estimate, scalers
from src.modules.mask import CompressedMask, compress_k, grouped_topk
from src.modules.sea import SeaConfig, SeaOutput, SeaWeights, global_context, mix
from src.modules.sea.pipeline import Forced
from src.modules.tensor_core import DenseTensor, ops


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


def dense_scores(Q, K) -> DenseTensor:
    """QK^T / sqrt(d)."""
    Q, K = ops.as_tensor(Q), ops.as_tensor(K)
    return ops.div(ops.matmul(Q, ops.transpose(K)), math.sqrt(Q.shape[-1]))


def dense_probs(Q, K, causal: bool = False) -> DenseTensor:
    """Full attention matrix A = softmax(QK^T/sqrt(d)) with an optional causal mask."""
    scores = dense_scores(Q, K)
    mask = causal_mask(scores.shape[-1]) if causal else None
    return ops.softmax_lastdim(scores, mask=mask)


def dense_attention(Q, K, V, causal: bool = False) -> DenseTensor:
    return ops.matmul(dense_probs(Q, K, causal), ops.as_tensor(V))


def _paint_matrix(W: int, K: int, k: int) -> np.ndarray:
    """
    Bool [K, W]: the columns compressed column j paints in a row of width W.

    Column j owns [floor(jW/K), floor((j+1)W/K)), at least one column wide,
    and receives min(k, ceil(W/K), block width) evenly spaced columns.
    """
    paint = np.zeros((K, W), dtype=bool)
    per_block = min(k, math.ceil(W / K))
    for j in range(K):
        lo = math.floor(j * W / K)
        hi = max(math.floor((j + 1) * W / K), lo + 1)
        width = hi - lo
        count = min(per_block, width)
        for i in range(count):
            paint[j, lo + math.floor(i * width / count)] = True
    return paint


def dense_interpolate_mask(m_hat: CompressedMask, T: int, k: int, causal: bool = False) -> np.ndarray:
    """
    Brute-force M* as a dense bool [H, T, T].

    Each row of M̂ (zeros included) is resized to its width through a dense
    paint matrix, then rows holding more than k columns keep the columns at
    sorted positions floor(i*c/k).
    """
    mask = m_hat.m_hat
    H, _, K = mask.shape
    out = np.zeros((H, T, T), dtype=bool)
    paints = {}
    for t in range(T):
        W = t + 1 if causal else T
        if W not in paints:
            paints[W] = _paint_matrix(W, K, k)
        out[:, t, :W] = (mask[:, t, :].astype(np.int64) @ paints[W].astype(np.int64)) > 0

    for h, t in zip(*np.nonzero(out.sum(axis=-1) > k)):
        cols = np.flatnonzero(out[h, t])
        out[h, t] = False
        out[h, t, cols[(np.arange(k) * len(cols)) // k]] = True
    return out


def dense_emulation(Q, K, V, weights: SeaWeights, cfg: SeaConfig, *, k: Optional[int] = None,
                    diagnostics: bool = False, force_s_prob: Forced = None,
                    force_s_mix: Forced = None) -> SeaOutput:
    """
    Same contract as sea_forward, computed densely.

    Gradients flow to Q, K, V and to every estimator weight that requires them
    (the mask itself is discrete).
    """
    k = cfg.k if k is None else cfg.validate_k(k)
    Q, K, V = ops.as_tensor(Q), ops.as_tensor(K), ops.as_tensor(V)

    a_hat, z = estimate(Q, K, V, weights.estimator, weights.feature_map, cfg)
    s_prob, s_mix = scalers(z, weights.estimator)
    if force_s_prob is not None:
        s_prob = DenseTensor(np.broadcast_to(np.asarray(force_s_prob, dtype=s_prob.dtype), s_prob.shape).copy())
    if force_s_mix is not None:
        s_mix = DenseTensor(np.broadcast_to(np.asarray(force_s_mix, dtype=s_mix.dtype), s_mix.shape).copy())

    k_hat = compress_k(k, cfg.K, cfg.T)
    m_hat = grouped_topk(a_hat, cfg.mode, k_hat)
    m_star = dense_interpolate_mask(m_hat, cfg.T, k, cfg.causal)

    probs = ops.softmax_lastdim(dense_scores(Q, K), mask=m_star)
    a_star = ops.mul(probs, ops.reshape(s_prob, s_prob.shape + (1,)))
    c = ops.matmul(a_star, V)
    c_sea = mix(c, global_context(a_hat, V, cfg.causal), s_mix)

    diag = None
    if diagnostics:
        diag = {"a_hat": a_hat, "z": z, "m_hat": m_hat.m_hat, "mask": m_star,
                "a_star": a_star, "s_prob": s_prob, "s_mix": s_mix, "c": c}
    return SeaOutput(c_sea, diag)
