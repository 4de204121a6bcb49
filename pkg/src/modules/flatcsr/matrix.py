"""
FlatCSR sparse matrix.

A FlatCSR matrix stores the H x T x T attention pattern as a plain CSR matrix
whose layout is chosen by the top-k mode that produced it:

    flat layout     (PerBatch, CausalPerBatch): row = query t,     col = h*T + key
    stacked layout  (PerQuery, PerHead):        row = h*T + query, col = key

Either way the entries of one logical row (h, t) are contiguous, and the
group tag maps every stored entry back to (head, query, key).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from src.modules.tensor_core import DenseTensor, StructuralError

if TYPE_CHECKING:
    from src.modules.mask.modes import TopKMode


@dataclass(frozen=True, eq=False)
class FlatCsrMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray          # int64 [n_rows + 1]
    col_indices: np.ndarray          # int64 [nnz]
    values: Optional[np.ndarray]     # [nnz]; None for binary masks
    group_tag: TopKMode
    n_heads: int
    seq_len: int

    # =========================================================================
    # Construction
    # =========================================================================

    @staticmethod
    def extents(mode: TopKMode, H: int, T: int) -> tuple[int, int]:
        return (T, H * T) if mode.flat_layout else (H * T, T)

    @classmethod
    def empty(cls, mode: TopKMode, H: int, T: int) -> "FlatCsrMatrix":
        n_rows, n_cols = cls.extents(mode, H, T)
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), None, mode, H, T)

    @classmethod
    def from_coords(cls, head, query, key, mode: TopKMode, H: int, T: int,
                    values: Optional[np.ndarray] = None) -> "FlatCsrMatrix":
        """Build from unordered (head, query, key) triples; duplicates are merged (first value wins)."""
        head, query, key = (np.asarray(a, dtype=np.int64).ravel() for a in (head, query, key))
        n_rows, n_cols = cls.extents(mode, H, T)
        if mode.flat_layout:
            rows, cols = query, head * T + key
        else:
            rows, cols = head * T + query, key
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        keep = np.ones(len(rows), dtype=bool)
        keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        rows, cols = rows[keep], cols[keep]
        vals = None if values is None else np.asarray(values).ravel()[order][keep]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        matrix = cls(n_rows, n_cols, offsets, cols, vals, mode, H, T)
        matrix.validate()
        return matrix

    def with_values(self, values: np.ndarray) -> "FlatCsrMatrix":
        return replace(self, values=values)

    # =========================================================================
    # Structure
    # =========================================================================

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def is_binary(self) -> bool:
        return self.values is None

    def validate(self) -> None:
        offsets, cols = self.row_offsets, self.col_indices
        expected = self.extents(self.group_tag, self.n_heads, self.seq_len)
        if (self.n_rows, self.n_cols) != expected:
            raise StructuralError(f"extents {(self.n_rows, self.n_cols)} do not match layout "
                                  f"{self.group_tag.value} for H={self.n_heads}, T={self.seq_len}")
        if offsets.shape != (self.n_rows + 1,):
            raise StructuralError(f"row_offsets has length {len(offsets)}, expected {self.n_rows + 1}")
        if offsets[0] != 0 or offsets[-1] != len(cols):
            raise StructuralError(f"row_offsets must run from 0 to nnz={len(cols)}, "
                                  f"got {offsets[0]}..{offsets[-1]}")
        if np.any(np.diff(offsets) < 0):
            raise StructuralError("row_offsets is not nondecreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise StructuralError(f"column index out of range [0, {self.n_cols})")
        if len(cols) > 1:
            within_row = np.ones(len(cols) - 1, dtype=bool)
            boundaries = offsets[1:-1]
            within_row[boundaries[(boundaries > 0) & (boundaries < len(cols))] - 1] = False
            if np.any(np.diff(cols)[within_row] <= 0):
                raise StructuralError("column indices are not strictly increasing within a row")
        if self.values is not None:
            if self.values.shape != cols.shape:
                raise StructuralError(f"values has shape {self.values.shape}, expected ({len(cols)},)")
            if not np.isfinite(self.values).all():
                raise StructuralError("values contain non-finite entries")

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(head, query, key) of every stored entry, in storage order."""
        rows, cols, T = self.row_ids(), self.col_indices, self.seq_len
        if self.group_tag.flat_layout:
            return cols // T, rows, cols % T
        return rows // T, rows % T, cols

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Logical-row segments: (starts, heads, queries).

        starts[i] is the storage index where the entries of logical row
        (heads[i], queries[i]) begin; only nonempty logical rows appear.
        """
        head, query, _ = self.coords()
        if self.nnz == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        logical = head * self.seq_len + query
        change = np.ones(self.nnz, dtype=bool)
        change[1:] = logical[1:] != logical[:-1]
        starts = np.flatnonzero(change)
        return starts, head[starts], query[starts]

    def logical_row_counts(self) -> np.ndarray:
        """Stored entries per logical row, shape [H, T]."""
        head, query, _ = self.coords()
        counts = np.bincount(head * self.seq_len + query, minlength=self.n_heads * self.seq_len)
        return counts.reshape(self.n_heads, self.seq_len)

    def pairs(self) -> set[tuple[int, int, int]]:
        return set(zip(*(a.tolist() for a in self.coords())))

    # =========================================================================
    # Dense views and debug output
    # =========================================================================

    def densify(self, dtype=np.float64) -> DenseTensor:
        """Zero-filled [H, T, T]; binary masks densify to ones at stored positions."""
        out = np.zeros((self.n_heads, self.seq_len, self.seq_len), dtype=dtype)
        head, query, key = self.coords()
        out[head, query, key] = 1.0 if self.values is None else self.values
        return DenseTensor(out)

    def dump(self) -> str:
        """One line per stored row: `row, col:value, col:value, ...`."""
        lines = []
        for row in range(self.n_rows):
            begin, end = self.row_offsets[row], self.row_offsets[row + 1]
            if begin == end:
                continue
            cols = self.col_indices[begin:end]
            vals = np.ones(end - begin) if self.values is None else self.values[begin:end]
            lines.append(", ".join([str(row)] + [f"{c}:{v:.6g}" for c, v in zip(cols, vals)]))
        return "\n".join(lines) + ("\n" if lines else "")


def sparsify(dense, pattern: FlatCsrMatrix) -> FlatCsrMatrix:
    """Gather dense [H, T, T] values at the stored positions of `pattern`."""
    arr = dense.data if isinstance(dense, DenseTensor) else np.asarray(dense)
    expected = (pattern.n_heads, pattern.seq_len, pattern.seq_len)
    if arr.shape != expected:
        raise StructuralError(f"sparsify: dense shape {arr.shape} does not match pattern extents {expected}")
    head, query, key = pattern.coords()
    return pattern.with_values(arr[head, query, key].copy())
