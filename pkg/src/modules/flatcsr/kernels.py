"""
FlatCSR kernels.

Each kernel touches only stored entries (work proportional to nnz or nnz*d),
reports its work to the active WorkCounter and validates its output. All
kernels are forward-only.
"""
import math

import numpy as np

from src.modules.flatcsr.matrix import FlatCsrMatrix
from src.modules.tensor_core import DenseTensor, StructuralError
from src.utils.counters import record_work


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, DenseTensor) else np.asarray(x)


def _check_operand(name: str, x: np.ndarray, mask: FlatCsrMatrix) -> None:
    if x.ndim != 3 or x.shape[:2] != (mask.n_heads, mask.seq_len):
        raise StructuralError(f"{name} has shape {x.shape}, matrix extents need "
                              f"[{mask.n_heads}, {mask.seq_len}, d]")


def _segment_lengths(starts: np.ndarray, nnz: int) -> np.ndarray:
    return np.diff(np.append(starts, nnz))


def sparse_masked_qk(Q, K, mask: FlatCsrMatrix) -> FlatCsrMatrix:
    """values[e] = q_{h,t} . k_{h,c} / sqrt(d) on exactly the stored pattern."""
    q, k = _array(Q), _array(K)
    _check_operand("Q", q, mask)
    _check_operand("K", k, mask)
    if q.shape != k.shape:
        raise StructuralError(f"Q {q.shape} and K {k.shape} differ")
    d = q.shape[-1]
    head, query, key = mask.coords()
    values = np.einsum("ed,ed->e", q[head, query], k[head, key]) / math.sqrt(d)
    record_work("sparse_masked_qk", mask.nnz * d, values.nbytes)
    out = mask.with_values(values)
    out.validate()
    return out


def sparse_row_softmax(s: FlatCsrMatrix) -> FlatCsrMatrix:
    """Softmax over the stored values of each logical row; empty rows stay empty."""
    if s.is_binary:
        raise StructuralError("sparse_row_softmax needs stored values, got a binary mask")
    if s.nnz == 0:
        return s
    starts, _, _ = s.segments()
    lengths = _segment_lengths(starts, s.nnz)
    shifted = s.values - np.repeat(np.maximum.reduceat(s.values, starts), lengths)
    e = np.exp(shifted)
    probs = e / np.repeat(np.add.reduceat(e, starts), lengths)
    record_work("sparse_row_softmax", 3 * s.nnz, probs.nbytes)
    out = s.with_values(probs)
    out.validate()
    return out


def scale_rows(p: FlatCsrMatrix, s_prob) -> FlatCsrMatrix:
    """Multiply every stored value of logical row (h, t) by s_prob[t] (or s_prob[h, t])."""
    scale = _array(s_prob)
    if scale.shape not in ((p.seq_len,), (p.n_heads, p.seq_len)):
        raise StructuralError(f"s_prob has shape {scale.shape}, expected ({p.seq_len},) "
                              f"or ({p.n_heads}, {p.seq_len})")
    values = np.ones(p.nnz) if p.is_binary else p.values
    head, query, _ = p.coords()
    factor = scale[query] if scale.ndim == 1 else scale[head, query]
    scaled = values * factor
    record_work("scale_rows", p.nnz, scaled.nbytes)
    out = p.with_values(scaled)
    out.validate()
    return out


def spmm(a: FlatCsrMatrix, V) -> DenseTensor:
    """C[h, t, :] = sum_e values[e] * V[h, key(e), :] over the entries of logical row (h, t)."""
    v = _array(V)
    _check_operand("V", v, a)
    out = np.zeros(v.shape, dtype=np.result_type(v.dtype, np.float64 if a.is_binary else a.values.dtype))
    if a.nnz:
        head, _, key = a.coords()
        starts, seg_head, seg_query = a.segments()
        gathered = v[head, key]
        contributions = gathered if a.is_binary else a.values[:, None] * gathered
        out[seg_head, seg_query] = np.add.reduceat(contributions, starts, axis=0)
    record_work("spmm", a.nnz * v.shape[-1], out.nbytes)
    return DenseTensor(out.astype(v.dtype, copy=False))
