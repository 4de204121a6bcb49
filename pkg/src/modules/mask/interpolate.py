"""
Sparse nearest-neighbour interpolation of the compressed mask.

Only the nonzeros of M̂ are visited. A nonzero at compressed column j of a
row of width W (T, or t+1 for causal rows) covers the destination block
[floor(jW/K), floor((j+1)W/K)), widened to one column when it collapses. The
block receives n = min(p, w) columns at start + floor(i*w/n), where
p = min(k, ceil(W/K)) and w is the block width. Rows are deduplicated and
then thinned uniformly to at most k columns (kept positions floor(i*c/k)).
"""
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator

import numpy as np

from src.modules.flatcsr.matrix import FlatCsrMatrix
from src.modules.mask.topk import CompressedMask
from src.modules.tensor_core import ConfigValidationError, DimensionError
from src.utils.counters import record_nnz, record_work

# Test-only fault injection: shifts every emitted column by this amount (mod row width).
_column_shift: ContextVar[int] = ContextVar("interpolation_column_shift", default=0)


@contextmanager
def inject_off_by_one() -> Iterator[None]:
    """Mutation hook: emitted columns move one to the right while active."""
    token = _column_shift.set(1)
    try:
        yield
    finally:
        _column_shift.reset(token)


def block_bounds(j: np.ndarray, width: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """(start, block width) of compressed column j in rows of the given width."""
    start = (j * width) // K
    end = ((j + 1) * width) // K
    return start, np.maximum(end - start, 1)


def duplications(width: np.ndarray, K: int, k: int) -> np.ndarray:
    """p = min(k, ceil(W/K))."""
    return np.minimum(k, (width + K - 1) // K)


def thin_rows(segment_ids: np.ndarray, k: int) -> np.ndarray:
    """
    Keep mask over entries grouped by contiguous segment ids: a segment of c > k
    entries keeps the ones at positions floor(i*c/k), i < k.
    """
    n = len(segment_ids)
    if n == 0:
        return np.zeros(0, dtype=bool)
    change = np.ones(n, dtype=bool)
    change[1:] = segment_ids[1:] != segment_ids[:-1]
    starts = np.flatnonzero(change)
    counts = np.diff(np.append(starts, n))
    c = np.repeat(counts, counts)
    rank = np.arange(n) - np.repeat(starts, counts)
    first_i = (rank * k + c - 1) // c
    return (c <= k) | ((first_i < k) & ((first_i * c) // k == rank))


def interpolate_mask(m_hat: CompressedMask, T: int, k: int, causal: bool = False) -> FlatCsrMatrix:
    """Expand M̂ [H, T, K] into the binary FlatCSR mask M* over H x T x T."""
    mask = m_hat.m_hat
    if mask.ndim != 3 or mask.shape[1] != T:
        raise DimensionError(f"interpolate_mask: compressed mask {mask.shape} does not have T={T} rows")
    if k < 1:
        raise ConfigValidationError(f"k must be >= 1, got {k}")
    H, _, K = mask.shape
    mode = m_hat.mode

    if mode.flat_layout:
        t, h, j = np.nonzero(mask.transpose(1, 0, 2))
    else:
        h, t, j = np.nonzero(mask)
    h, t, j = (a.astype(np.int64) for a in (h, t, j))

    width = t + 1 if causal else np.full_like(t, T)
    start, w = block_bounds(j, width, K)
    n = np.minimum(duplications(width, K, k), w)

    total = int(n.sum())
    source = np.repeat(np.arange(len(j)), n)
    i = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    cols = start[source] + (i * w[source]) // n[source]
    shift = _column_shift.get()
    if shift:
        cols = (cols + shift) % width[source]
    rows_h, rows_t = h[source], t[source]
    if causal:
        inside = cols <= rows_t
        cols, rows_h, rows_t = cols[inside], rows_h[inside], rows_t[inside]

    logical = rows_h * T + rows_t
    keep = np.ones(len(cols), dtype=bool)
    keep[1:] = (logical[1:] != logical[:-1]) | (cols[1:] != cols[:-1])
    cols, rows_h, rows_t, logical = cols[keep], rows_h[keep], rows_t[keep], logical[keep]

    keep = thin_rows(logical, k)
    cols, rows_h, rows_t = cols[keep], rows_h[keep], rows_t[keep]

    if mode.flat_layout:
        rows, cols = rows_t, rows_h * T + cols
    else:
        rows = rows_h * T + rows_t
    n_rows, n_cols = FlatCsrMatrix.extents(mode, H, T)
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])

    record_work("interpolate_mask", total, cols.nbytes + offsets.nbytes)
    record_nnz(len(cols))
    out = FlatCsrMatrix(n_rows, n_cols, offsets, cols.astype(np.int64), None, mode, H, T)
    out.validate()
    return out
