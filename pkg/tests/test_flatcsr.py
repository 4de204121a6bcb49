"""
Tests for the FlatCSR format and its four kernels against dense oracles.
"""
import math

import numpy as np
import pytest

from src.modules.flatcsr import (
    FlatCsrMatrix,
    densify,
    scale_rows,
    sparse_masked_qk,
    sparse_row_softmax,
    sparsify,
    spmm,
)
from src.modules.mask import TopKMode
from src.modules.tensor_core import StructuralError, ops
from src.utils.counters import WorkCounter, counting

LAYOUTS = [TopKMode.PER_QUERY, TopKMode.PER_BATCH]


def from_dense(pattern: np.ndarray, mode: TopKMode) -> FlatCsrMatrix:
    H, T, _ = pattern.shape
    return FlatCsrMatrix.from_coords(*np.nonzero(pattern), mode=mode, H=H, T=T)


def random_pattern(rng, H, T, density=0.3) -> np.ndarray:
    return rng.random((H, T, T)) < density


# =============================================================================
# Structure
# =============================================================================

class TestStructure:

    @pytest.mark.parametrize("mode", LAYOUTS)
    def test_from_coords_sorts_and_merges(self, mode):
        m = FlatCsrMatrix.from_coords([1, 0, 1, 1], [2, 0, 2, 0], [3, 1, 3, 0], mode=mode, H=2, T=4)
        assert m.nnz == 3
        assert m.pairs() == {(1, 2, 3), (0, 0, 1), (1, 0, 0)}
        m.validate()

    def test_binary_flag_follows_values(self):
        pattern = FlatCsrMatrix.from_coords([0, 0], [1, 0], [0, 1], mode=TopKMode.PER_QUERY, H=1, T=2)
        assert pattern.is_binary
        assert not pattern.with_values(np.array([0.5, 2.0])).is_binary

    def test_layout_extents(self):
        assert FlatCsrMatrix.extents(TopKMode.PER_HEAD, 3, 5) == (15, 5)
        assert FlatCsrMatrix.extents(TopKMode.CAUSAL_PER_BATCH, 3, 5) == (5, 15)

    def test_flat_layout_offsets_columns_by_head(self):
        m = FlatCsrMatrix.from_coords([1], [2], [3], mode=TopKMode.PER_BATCH, H=2, T=4)
        assert m.row_ids().tolist() == [2]
        assert m.col_indices.tolist() == [1 * 4 + 3]

    @pytest.mark.parametrize("offsets,cols,values", [
        ([0, 1, 3], [0, 2, 1], None),            # decreasing within a row
        ([0, 2, 1], [0, 1, 2], None),            # offsets decrease
        ([0, 1, 2], [0, 4], None),               # column out of range
        ([1, 1, 2], [0, 1], None),               # offsets do not start at zero
        ([0, 1, 2], [0, 1], [0.5, np.nan]),      # non-finite value
        ([0, 1, 2], [0, 1], [0.5]),              # values length
    ])
    def test_validate_rejects(self, offsets, cols, values):
        m = FlatCsrMatrix(2, 4, np.array(offsets), np.array(cols),
                          None if values is None else np.array(values), TopKMode.PER_BATCH, 2, 2)
        with pytest.raises(StructuralError):
            m.validate()

    def test_validate_rejects_wrong_extents(self):
        m = FlatCsrMatrix(4, 4, np.zeros(5, dtype=np.int64), np.zeros(0, dtype=np.int64),
                          None, TopKMode.PER_BATCH, 1, 4)
        m.validate()
        bad = FlatCsrMatrix(4, 4, np.zeros(5, dtype=np.int64), np.zeros(0, dtype=np.int64),
                            None, TopKMode.PER_BATCH, 2, 4)
        with pytest.raises(StructuralError):
            bad.validate()

    def test_dump_lists_stored_rows(self):
        m = FlatCsrMatrix.from_coords([0, 0], [0, 1], [1, 0], mode=TopKMode.PER_QUERY, H=1, T=3,
                                      values=np.array([0.5, 1.0]))
        assert m.dump() == "0, 1:0.5\n1, 0:1\n"
        assert FlatCsrMatrix.empty(TopKMode.PER_QUERY, 1, 3).dump() == ""


# =============================================================================
# Kernels
# =============================================================================

class TestSparseMaskedQK:

    def test_empty_mask(self, rng):
        Q = K = rng.standard_normal((2, 4, 3))
        out = sparse_masked_qk(Q, K, FlatCsrMatrix.empty(TopKMode.PER_QUERY, 2, 4))
        assert out.nnz == 0

    @pytest.mark.parametrize("mode", LAYOUTS)
    def test_full_mask_equals_dense_scores(self, rng, mode):
        Q, K = rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 4, 3))
        out = sparse_masked_qk(Q, K, from_dense(np.ones((2, 4, 4), dtype=bool), mode))
        expected = Q @ K.transpose(0, 2, 1) / math.sqrt(3)
        np.testing.assert_allclose(out.densify().data, expected, atol=1e-12)

    def test_single_entry(self, rng):
        Q, K = rng.standard_normal((1, 5, 4)), rng.standard_normal((1, 5, 4))
        mask = FlatCsrMatrix.from_coords([0], [3], [1], mode=TopKMode.PER_QUERY, H=1, T=5)
        out = sparse_masked_qk(Q, K, mask)
        assert out.values[0] == pytest.approx(Q[0, 3] @ K[0, 1] / 2.0, abs=1e-12)

    def test_extent_mismatch(self, rng):
        mask = FlatCsrMatrix.empty(TopKMode.PER_QUERY, 2, 4)
        with pytest.raises(StructuralError):
            sparse_masked_qk(rng.standard_normal((2, 5, 3)), rng.standard_normal((2, 5, 3)), mask)

    def test_work_is_proportional_to_nonzeros(self, rng):
        H, T, d = 2, 32, 8
        mask = from_dense(random_pattern(rng, H, T, 0.1), TopKMode.PER_QUERY)
        counter = WorkCounter()
        with counting(counter):
            scores = sparse_masked_qk(rng.standard_normal((H, T, d)), rng.standard_normal((H, T, d)), mask)
            probs = sparse_row_softmax(scores)
            spmm(scale_rows(probs, np.full(T, 0.5)), rng.standard_normal((H, T, d)))
        assert counter.ops["sparse_masked_qk"] == mask.nnz * d
        assert counter.ops["spmm"] == mask.nnz * d
        assert counter.total_macs() <= 4 * mask.nnz * d


class TestSparseRowSoftmax:

    def test_single_entry_row_is_one(self):
        s = FlatCsrMatrix.from_coords([0], [1], [2], mode=TopKMode.PER_QUERY, H=1, T=3, values=np.array([7.0]))
        assert sparse_row_softmax(s).values.tolist() == [1.0]

    def test_equal_scores_split_evenly(self):
        s = FlatCsrMatrix.from_coords([0, 0], [1, 1], [0, 2], mode=TopKMode.PER_QUERY, H=1, T=3,
                                      values=np.zeros(2))
        assert sparse_row_softmax(s).values.tolist() == [0.5, 0.5]

    @pytest.mark.parametrize("mode", LAYOUTS)
    def test_matches_dense_masked_softmax(self, rng, mode):
        H, T = 3, 12
        pattern = random_pattern(rng, H, T)
        pattern[:, 0] = False                                          # an empty row
        scores = rng.standard_normal((H, T, T))
        out = sparse_row_softmax(sparsify(scores, from_dense(pattern, mode)))
        expected = ops.softmax_lastdim(scores, mask=pattern).data
        np.testing.assert_allclose(out.densify().data, expected, atol=1e-12)
        rows = out.logical_row_counts() > 0
        np.testing.assert_allclose(out.densify().data.sum(axis=-1)[rows], 1.0, atol=1e-12)

    def test_binary_mask_has_no_values(self):
        with pytest.raises(StructuralError):
            sparse_row_softmax(FlatCsrMatrix.from_coords([0], [0], [0], mode=TopKMode.PER_QUERY, H=1, T=2))


class TestScaleRows:

    @pytest.mark.parametrize("mode", LAYOUTS)
    def test_matches_dense_row_scaling(self, rng, mode):
        H, T = 2, 10
        pattern = random_pattern(rng, H, T)
        p = sparsify(rng.random((H, T, T)), from_dense(pattern, mode))
        s = rng.random(T)
        np.testing.assert_allclose(scale_rows(p, s).densify().data,
                                   p.densify().data * s[None, :, None], atol=1e-12)
        per_head = rng.random((H, T))
        np.testing.assert_allclose(scale_rows(p, per_head).densify().data,
                                   p.densify().data * per_head[:, :, None], atol=1e-12)

    def test_ones_and_halves(self, rng):
        p = sparsify(rng.random((1, 4, 4)), from_dense(np.ones((1, 4, 4), dtype=bool), TopKMode.PER_QUERY))
        np.testing.assert_array_equal(scale_rows(p, np.ones(4)).values, p.values)
        np.testing.assert_array_equal(scale_rows(p, np.full(4, 0.5)).values, p.values / 2)

    def test_length_mismatch(self):
        p = FlatCsrMatrix.empty(TopKMode.PER_QUERY, 1, 4)
        with pytest.raises(StructuralError):
            scale_rows(p, np.ones(3))


class TestSpmm:

    @pytest.mark.parametrize("mode", LAYOUTS)
    def test_identity_returns_values(self, rng, mode):
        V = rng.standard_normal((2, 5, 3))
        eye = from_dense(np.broadcast_to(np.eye(5, dtype=bool), (2, 5, 5)), mode)
        np.testing.assert_array_equal(spmm(eye.with_values(np.ones(eye.nnz)), V).data, V)

    def test_uniform_rows_average(self, rng):
        V = rng.standard_normal((1, 4, 3))
        full = from_dense(np.ones((1, 4, 4), dtype=bool), TopKMode.PER_QUERY)
        out = spmm(full.with_values(np.full(full.nnz, 0.25)), V).data
        np.testing.assert_allclose(out, np.broadcast_to(V.mean(axis=1, keepdims=True), V.shape), atol=1e-12)

    @pytest.mark.parametrize("mode", list(TopKMode))
    def test_matches_densified_matmul(self, rng, mode):
        H, T = 4, 8
        pattern = random_pattern(rng, H, T)
        a = sparsify(rng.random((H, T, T)), from_dense(pattern, mode))
        V = rng.standard_normal((H, T, 5))
        np.testing.assert_allclose(spmm(a, V).data, a.densify().data @ V, atol=1e-12)

    def test_empty_rows_give_zero_context(self, rng):
        a = FlatCsrMatrix.from_coords([0], [2], [1], mode=TopKMode.PER_QUERY, H=1, T=3, values=np.array([1.0]))
        V = rng.standard_normal((1, 3, 2))
        out = spmm(a, V).data
        np.testing.assert_array_equal(out[0, 2], V[0, 1])
        np.testing.assert_array_equal(out[0, :2], 0.0)

    def test_extent_mismatch(self, rng):
        with pytest.raises(StructuralError):
            spmm(FlatCsrMatrix.empty(TopKMode.PER_QUERY, 2, 4), rng.standard_normal((1, 4, 3)))


class TestDensify:

    def test_sparsify_full_pattern_round_trips(self, rng):
        D = rng.standard_normal((2, 3, 3))
        full = from_dense(np.ones((2, 3, 3), dtype=bool), TopKMode.PER_BATCH)
        np.testing.assert_array_equal(densify(sparsify(D, full)).data, D)

    def test_empty_is_zero(self):
        np.testing.assert_array_equal(densify(FlatCsrMatrix.empty(TopKMode.PER_HEAD, 2, 3)).data,
                                      np.zeros((2, 3, 3)))

    def test_nonzero_count_is_preserved(self, rng):
        m = from_dense(random_pattern(rng, 2, 6), TopKMode.PER_QUERY)
        assert np.count_nonzero(densify(m).data) == m.nnz
        assert densify(m, np.float32).dtype == np.float32

    def test_sparsify_checks_extents(self, rng):
        with pytest.raises(StructuralError):
            sparsify(np.ones((1, 3, 3)), FlatCsrMatrix.empty(TopKMode.PER_QUERY, 2, 3))
