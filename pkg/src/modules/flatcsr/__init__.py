"""
FlatCSR

Row-grouped sparse attention matrices and their kernels.
"""
from .kernels import scale_rows, sparse_masked_qk, sparse_row_softmax, spmm
from .matrix import FlatCsrMatrix, sparsify


def densify(a: FlatCsrMatrix, dtype=None):
    return a.densify() if dtype is None else a.densify(dtype)


__all__ = [
    "FlatCsrMatrix",
    "sparsify",
    "densify",
    "sparse_masked_qk",
    "sparse_row_softmax",
    "scale_rows",
    "spmm",
]
