"""
FAVOR+ kernel attention.

phi(x)_j = m^{-1/2} exp(w_j.x / d^{1/4} - |x|^2 / (2 sqrt(d))), so that
E[phi(q).phi(k)] = exp(q.k / sqrt(d)). favor_plus never materializes a T x T
matrix; the causal variant accumulates prefix sums over time.
"""
import math
from typing import Optional

import numpy as np

from src.modules.performer.feature_map import FeatureMap
from src.modules.tensor_core import DenseTensor, DimensionError, NumericalDegeneracyError, ops
from src.utils.logger import get_logger

logger = get_logger("performer")

DENOMINATOR_EPS = 1e-12
DEGENERACY_THRESHOLD = 1e-20


def _log_features(x: DenseTensor, fm: FeatureMap) -> DenseTensor:
    d = x.shape[-1]
    if d != fm.d:
        raise DimensionError(f"feature map expects d={fm.d}, input has shape {x.shape}")
    proj = ops.mul(ops.matmul(x, ops.transpose(fm.projection)), d ** -0.25)
    sq = ops.div(ops.sum(ops.mul(x, x), axis=-1, keepdims=True), 2.0 * math.sqrt(d))
    return ops.sub(ops.sub(proj, sq), 0.5 * math.log(fm.m))


def phi(x, fm: FeatureMap) -> DenseTensor:
    """Positive random features [..., T, m] for rows of x [..., T, d]."""
    return ops.exp(_log_features(ops.as_tensor(x), fm))


def favor_plus(Q, K, V, fm: FeatureMap, causal: bool = False) -> DenseTensor:
    """
    Normalized kernel attention phi(Q)(phi(K)^T V) / phi(Q)(phi(K)^T 1).

    Q, K: [..., T, d]; V: [..., T, d_v]. Leading dimensions are batch-like
    (heads). Stabilizers subtracted in log space cancel in the ratio.
    """
    Q, K, V = ops.as_tensor(Q), ops.as_tensor(K), ops.as_tensor(V)
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"favor_plus: Q {Q.shape} and K {K.shape} differ in d")
    if K.shape[:-1] != V.shape[:-1]:
        raise DimensionError(f"favor_plus: K {K.shape} and V {V.shape} differ in length")

    lq = _log_features(Q, fm)
    lk = _log_features(K, fm)
    if causal:
        # first token's max keeps every prefix independent of later tokens
        key_shift = lk.data[..., :1, :].max(axis=-1, keepdims=True)
    else:
        key_shift = lk.data.max(axis=(-2, -1), keepdims=True)
    phi_k = ops.exp(ops.sub(lk, key_shift))
    key_mass = np.cumsum(phi_k.data, axis=-2) if causal else phi_k.data.sum(axis=-2, keepdims=True)
    phi_q = ops.exp(ops.sub(lq, _query_shift(lq.data, key_mass)))

    if causal:
        num, den = _causal_terms(phi_q, phi_k, V)
    else:
        kv = ops.matmul(ops.transpose(phi_k), V)                       # [..., m, d_v]
        num = ops.matmul(phi_q, kv)                                    # [..., T, d_v]
        k_sum = ops.sum(phi_k, axis=-2, keepdims=True)                 # [..., 1, m]
        den = ops.sum(ops.mul(phi_q, k_sum), axis=-1, keepdims=True)   # [..., T, 1]

    _check_denominator(den.data)
    return ops.div(num, ops.add(den, DENOMINATOR_EPS))


def _query_shift(lq: np.ndarray, key_mass: np.ndarray) -> np.ndarray:
    """
    Per-feature offsets for the query log-features.

    Each row is shifted by logsumexp_j(lq_j + log key_mass_j), which leaves its
    stabilized normalizer at 1. Features whose key mass is zero or subnormal
    carry nothing into the sums; their exponent is capped at 0.
    """
    live = key_mass >= np.finfo(key_mass.dtype).tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        logits = np.where(live, lq + np.log(key_mass), -np.inf)
        top = logits.max(axis=-1, keepdims=True)
        shift = top + np.log(np.exp(logits - top).sum(axis=-1, keepdims=True))
    shift = np.where(np.isneginf(top), lq.max(axis=-1, keepdims=True), shift)
    return np.where(live, shift, np.maximum(shift, lq))


def _causal_terms(phi_q: DenseTensor, phi_k: DenseTensor, V: DenseTensor) -> tuple[DenseTensor, DenseTensor]:
    lead, (t, m), dv = phi_k.shape[:-2], phi_k.shape[-2:], V.shape[-1]
    outer = ops.mul(ops.reshape(phi_k, lead + (t, m, 1)), ops.reshape(V, lead + (t, 1, dv)))
    state = ops.cumsum(outer, axis=-3)                                  # [..., T, m, d_v]
    num = ops.reshape(ops.matmul(ops.reshape(phi_q, lead + (t, 1, m)), state), lead + (t, dv))
    k_prefix = ops.cumsum(phi_k, axis=-2)
    den = ops.sum(ops.mul(phi_q, k_prefix), axis=-1, keepdims=True)
    return num, den


def _check_denominator(den: np.ndarray) -> None:
    low = ~(den >= DEGENERACY_THRESHOLD)
    if low.any():
        where = tuple(int(i) for i in np.argwhere(low)[0][:-1])
        row = where[-1]
        logger.error(f"FAVOR+ normalizer underflow at index {where}")
        raise NumericalDegeneracyError(f"favor_plus: normalizer below {DEGENERACY_THRESHOLD} at row {row} (index {where})")


def identity_rows(T: int, d: int) -> np.ndarray:
    """Nearest-neighbour resize of the d x d identity to T rows: row t = e_{floor(t*d/T)}."""
    return np.eye(d)[ops.nn_indices(d, T)]


def build_v_cat(V, pos_emb: Optional[DenseTensor] = None) -> DenseTensor:
    """
    [V_I ; V] along the feature axis, shape [..., T, 2d].

    Bidirectional configs pass no pos_emb and get the resized identity; causal
    configs pass their learnable [T, d] positional embedding.
    """
    V = ops.as_tensor(V)
    t, d = V.shape[-2:]
    if t < 1:
        raise DimensionError(f"build_v_cat: need T >= 1, got {V.shape}")
    if pos_emb is None:
        v_i = DenseTensor(np.broadcast_to(identity_rows(t, d).astype(V.dtype), V.shape).copy())
    else:
        if pos_emb.shape != (t, d):
            raise DimensionError(f"build_v_cat: positional embedding {pos_emb.shape} does not match {(t, d)}")
        v_i = ops.broadcast_to(pos_emb, V.shape)
    return ops.concat([v_i, V], axis=-1)
