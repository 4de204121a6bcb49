"""
Distillation objective.

    total = (1/L) sum_i w_layer (L_approx + L_prob + w_context L_context + w_kd L_kd)_i
            + w_kd_task L_kd_task + w_task L_task

L_approx and L_prob come back already weighted (w_kl_* KL + w_mse_* MSE).
KL is taken with the teacher distribution as reference, sum_c p log(p / q),
with eps added to both arguments, then averaged over rows.
"""
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from src.modules.reference_oracle import dense_probs
from src.modules.tensor_core import ContractError, DenseTensor, DimensionError, ops

KL_EPS = 1e-12
STOCHASTIC_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    w_kl_approx: float = 0.1
    w_mse_approx: float = 1.0
    w_kl_prob: float = 0.1
    w_mse_prob: float = 1.0
    w_context: float = 1.0
    w_kd: float = 5.0
    w_layer: float = 1.0
    w_kd_task: float = 0.2
    w_task: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"loss weight {f.name} must be nonnegative, got {getattr(self, f.name)}")


@dataclass
class LayerLosses:
    approx: DenseTensor      # weighted KL + MSE
    prob: DenseTensor        # weighted KL + MSE
    context: DenseTensor     # raw MSE
    kd: DenseTensor          # raw MSE


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted contribution of every term; the fields before `total` sum to it."""
    L_approx: float = 0.0
    L_prob: float = 0.0
    L_context: float = 0.0
    L_kd: float = 0.0
    L_kd_task: float = 0.0
    L_task: float = 0.0
    total: float = 0.0

    CSV_HEADER = "step, L_approx, L_prob, L_context, L_kd, L_kd_task, L_task, total"

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self, step: int) -> str:
        return ", ".join([str(step)] + [repr(float(v)) for v in asdict(self).values()])

    @staticmethod
    def mean(items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        keys = [f.name for f in fields(LossBreakdown)]
        return LossBreakdown(**{k: float(np.mean([getattr(b, k) for b in items])) for k in keys})


# =============================================================================
# Building blocks
# =============================================================================

def _const(x) -> np.ndarray:
    return x.data if isinstance(x, DenseTensor) else np.asarray(x, dtype=np.float64)


def check_stochastic(p: np.ndarray, name: str) -> None:
    sums = p.sum(axis=-1)
    bad = np.abs(sums - 1.0) > STOCHASTIC_TOL
    if bad.any():
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ContractError(f"{name} row {where} sums to {sums[where]:.8f}, expected 1")


def kl_divergence(reference, q) -> DenseTensor:
    """Mean over rows of sum_c p log((p + eps) / (q + eps)); gradient flows into q only."""
    p = _const(reference)
    q = ops.as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence: reference {p.shape} and student {q.shape} differ")
    entropy_part = float(np.sum(p * np.log(p + KL_EPS)))
    cross = ops.sum(ops.mul(p, ops.log(ops.add(q, KL_EPS))))
    rows = p.size // p.shape[-1]
    return ops.div(ops.sub(entropy_part, cross), float(rows))


def _kl_mse(student: DenseTensor, teacher: np.ndarray, w_kl: float, w_mse: float) -> DenseTensor:
    return ops.add(ops.mul(kl_divergence(teacher, student), w_kl),
                   ops.mul(ops.mse(student, teacher), w_mse))


def expand_compressed(a_hat, T: int, causal: bool) -> DenseTensor:
    """
    A′: nearest-neighbour expansion of Â [..., T, K] to [..., T, T], rows renormalized.

    Causal rows resize to their own width t+1; columns past t are zero.
    """
    a_hat = ops.as_tensor(a_hat)
    K = a_hat.shape[-1]
    cols = np.arange(T)
    if causal:
        widths = np.arange(1, T + 1)[:, None]
        index = np.where(cols[None, :] < widths, (cols[None, :] * K) // widths, 0)
        keep = np.tril(np.ones((T, T)))
        expanded = ops.mul(ops.gather_lastdim(a_hat, np.broadcast_to(index, a_hat.shape[:-1] + (T,))), keep)
    else:
        index = np.broadcast_to(ops.nn_indices(K, T), a_hat.shape[:-1] + (T,))
        expanded = ops.gather_lastdim(a_hat, index)
    return ops.div(expanded, ops.sum(expanded, axis=-1, keepdims=True))


# =============================================================================
# Per-layer terms
# =============================================================================

def loss_approx(a_hat, teacher_attn, causal: bool = False,
                weights: LossWeights = LossWeights()) -> DenseTensor:
    teacher = _const(teacher_attn)
    check_stochastic(teacher, "teacher attention")
    a_prime = expand_compressed(a_hat, teacher.shape[-1], causal)
    return _kl_mse(a_prime, teacher, weights.w_kl_approx, weights.w_mse_approx)


def loss_prob(Q, K, teacher_attn, causal: bool = False,
              weights: LossWeights = LossWeights()) -> DenseTensor:
    """Dense student attention softmax(QK^T/sqrt(d)) against the teacher; O(T^2) by nature."""
    teacher = _const(teacher_attn)
    check_stochastic(teacher, "teacher attention")
    return _kl_mse(dense_probs(Q, K, causal), teacher, weights.w_kl_prob, weights.w_mse_prob)


def loss_context(c_sea, teacher_context) -> DenseTensor:
    return ops.mse(c_sea, _const(teacher_context))


def loss_kd_layer(o_sea, o_teacher) -> DenseTensor:
    return ops.mse(o_sea, _const(o_teacher))


def loss_kd_task(p_student, p_teacher) -> DenseTensor:
    """KL between teacher and student next-token distributions, from logits."""
    teacher_logits = _const(p_teacher)
    shifted = teacher_logits - teacher_logits.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(log_p)
    log_q = ops.log_softmax_lastdim(p_student)
    rows = p.size // p.shape[-1]
    return ops.div(ops.sub(float(np.sum(p * log_p)), ops.sum(ops.mul(p, log_q))), float(rows))


def task_loss(logits, targets: np.ndarray, loss_mask: Optional[np.ndarray] = None) -> DenseTensor:
    """Mean cross-entropy of next-token targets over the masked positions."""
    logits = ops.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    picked = ops.gather_lastdim(ops.log_softmax_lastdim(logits), targets[..., None])
    weight = np.ones(targets.shape) if loss_mask is None else np.asarray(loss_mask, dtype=np.float64)
    count = float(weight.sum())
    if count == 0:
        raise ContractError("task_loss: loss mask selects no positions")
    return ops.div(ops.neg(ops.sum(ops.mul(ops.reshape(picked, targets.shape), weight))), count)


# =============================================================================
# Total
# =============================================================================

def total_loss(per_layer: Sequence[LayerLosses], kd_task: Optional[DenseTensor] = None,
               task: Optional[DenseTensor] = None,
               weights: LossWeights = LossWeights()) -> tuple[DenseTensor, LossBreakdown]:
    if len(per_layer) < 1:
        raise ContractError("total_loss needs at least one layer")
    scale = weights.w_layer / len(per_layer)

    def layer_mean(parts: list[DenseTensor], w: float) -> DenseTensor:
        acc = parts[0]
        for part in parts[1:]:
            acc = ops.add(acc, part)
        return ops.mul(acc, scale * w)

    terms = [
        layer_mean([l.approx for l in per_layer], 1.0),
        layer_mean([l.prob for l in per_layer], 1.0),
        layer_mean([l.context for l in per_layer], weights.w_context),
        layer_mean([l.kd for l in per_layer], weights.w_kd),
        ops.mul(kd_task if kd_task is not None else 0.0, weights.w_kd_task),
        ops.mul(task if task is not None else 0.0, weights.w_task),
    ]
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)

    values = [t.item() for t in terms]
    if not math.isfinite(total.item()):
        raise ContractError("total_loss is not finite")
    breakdown = LossBreakdown(*values, total=total.item())
    return total, breakdown
