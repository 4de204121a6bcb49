"""
Tests for the assembled SEA layer: configuration, the sparse pipeline and
its agreement with the dense emulation.
"""
import numpy as np
import pytest

from src.modules.bench_cli.suites import random_qkv
from src.modules.mask import TopKMode
from src.modules.reference_oracle import dense_attention, dense_emulation
from src.modules.sea import SeaConfig, SeaWeights, global_context, importance, sea_forward
from src.modules.tensor_core import ConfigValidationError, DenseTensor, StageError, no_grad
from src.utils.counters import WorkCounter, counting

MODES = [(mode, False) for mode in TopKMode] + [(TopKMode.PER_QUERY, True), (TopKMode.CAUSAL_PER_BATCH, True)]


def max_diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# =============================================================================
# Configuration
# =============================================================================

class TestSeaConfig:

    def test_defaults(self):
        cfg = SeaConfig.create(T=32, K=8, k=4, d=16, H=2)
        assert (cfg.d_hidden, cfg.c_s, cfg.c_h, cfg.m) == (64, 2, 4, 64)
        assert cfg.mode is TopKMode.PER_QUERY
        assert SeaConfig.create(T=32, K=8, k=4, d=16, H=2, causal=True).mode is TopKMode.CAUSAL_PER_BATCH

    @pytest.mark.parametrize("fields", [
        dict(T=0, K=8, k=4, d=8, H=2),
        dict(T=16, K=8, k=4, d=8, H=-1),
        dict(T=16, K=7, k=4, d=8, H=2),              # K not divisible by c_s
        dict(T=16, K=8, k=17, d=8, H=2),             # k > T
        dict(T=16, K=32, k=4, d=8, H=2),             # K > T
        dict(T=16, K=8, k=4, d=8, H=2, precision="f16"),
    ])
    def test_rejects_inconsistent_fields(self, fields):
        with pytest.raises(ConfigValidationError):
            SeaConfig.create(**fields)

    @pytest.mark.parametrize("mode", ["PerHead", "PerBatch"])
    def test_causal_rejects_modes_that_mix_time(self, mode):
        with pytest.raises(ConfigValidationError):
            SeaConfig.create(T=16, K=8, k=4, d=8, H=2, causal=True, mode=mode)

    def test_unknown_mode(self):
        with pytest.raises(ConfigValidationError):
            SeaConfig.create(T=16, K=8, k=4, d=8, H=2, mode="PerToken")

    def test_validate_k(self, small_cfg):
        assert small_cfg.validate_k(small_cfg.T) == small_cfg.T
        for bad in (0, small_cfg.T + 1):
            with pytest.raises(ConfigValidationError):
                small_cfg.validate_k(bad)

    def test_replace_revalidates(self, small_cfg):
        assert small_cfg.replace(mode="PerBatch").mode is TopKMode.PER_BATCH
        with pytest.raises(ConfigValidationError):
            small_cfg.replace(k=small_cfg.T + 1)


# =============================================================================
# Pipeline
# =============================================================================

class TestSeaForward:

    def test_output_shape_and_diagnostics(self, small_cfg, small_weights, qkv_for, rng):
        out = sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg, diagnostics=True)
        assert out.c_sea.shape == (small_cfg.H, small_cfg.T, small_cfg.d)
        diag = out.diagnostics
        assert diag["a_hat"].shape == (small_cfg.H, small_cfg.T, small_cfg.K)
        assert diag["mask"].nnz == diag["a_star"].nnz
        assert diag["mask"].logical_row_counts().max() <= small_cfg.k
        np.testing.assert_allclose(diag["i"].sum(axis=-1), 1.0, atol=1e-12)
        assert sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg).diagnostics is None

    def test_mix_gate_selects_sparse_context(self, small_cfg, small_weights, qkv_for, rng):
        out = sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg, diagnostics=True, force_s_mix=1.0)
        np.testing.assert_array_equal(out.c_sea.data, out.diagnostics["c"])

    def test_closed_gate_gives_global_context(self, small_cfg, small_weights, qkv_for, rng):
        out = sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg, diagnostics=True, force_s_mix=0.0)
        expected = np.broadcast_to(out.diagnostics["c_avg"], out.c_sea.shape)
        np.testing.assert_allclose(out.c_sea.data, expected, atol=1e-15)

    @pytest.mark.parametrize("causal", [False, True])
    @pytest.mark.parametrize("T", [16, 32, 64])
    def test_full_mask_is_dense_attention(self, make_cfg, qkv_for, rng, T, causal):
        cfg = make_cfg(T=T, k=T, mode="PerQuery", causal=causal)
        Q, K, V = qkv_for(rng, cfg)
        out = sea_forward(Q, K, V, SeaWeights.init(cfg, seed=T), cfg, force_s_prob=1.0, force_s_mix=1.0)
        assert max_diff(out.c_sea.data, dense_attention(Q, K, V, causal=causal).data) <= 1e-10

    @pytest.mark.parametrize("mode,causal", MODES)
    @pytest.mark.parametrize("T,K", [(16, 4), (64, 16)])
    def test_matches_dense_emulation(self, make_cfg, qkv_for, rng, mode, causal, T, K):
        for k in (1, 3, T // 2, T):
            cfg = make_cfg(T=T, K=K, k=k, mode=mode, causal=causal)
            weights = SeaWeights.init(cfg, seed=k)
            Q, K_, V = qkv_for(rng, cfg)
            sparse = sea_forward(Q, K_, V, weights, cfg)
            with no_grad():
                dense = dense_emulation(Q, K_, V, weights, cfg)
            assert max_diff(sparse.c_sea.data, dense.c_sea.data) <= 1e-10, k

    def test_concatenated_heads_match_dense_emulation(self, make_cfg, qkv_for, rng):
        cfg = make_cfg(mu_concat_heads=True, mode="PerHead")
        weights = SeaWeights.init(cfg, seed=2)
        Q, K, V = qkv_for(rng, cfg)
        with no_grad():
            dense = dense_emulation(Q, K, V, weights, cfg)
        assert max_diff(sea_forward(Q, K, V, weights, cfg).c_sea.data, dense.c_sea.data) <= 1e-10

    @pytest.mark.parametrize("mode", ["PerQuery", "CausalPerBatch"])
    def test_causal_prefix_is_bit_exact(self, make_cfg, qkv_for, rng, mode):
        cfg = make_cfg(T=32, k=6, causal=True, mode=mode)
        weights = SeaWeights.init(cfg, seed=9)
        Q, K, V = qkv_for(rng, cfg)
        base = sea_forward(Q, K, V, weights, cfg).c_sea.data
        for cut in (1, 7, 20, 31):
            changed = [x.copy() for x in (Q, K, V)]
            for x in changed:
                x[:, cut:] += rng.standard_normal(x[:, cut:].shape)
            out = sea_forward(*changed, weights, cfg).c_sea.data
            assert np.array_equal(out[:, :cut], base[:, :cut]), cut

    def test_mask_grows_with_k(self, make_cfg, qkv_for, rng):
        cfg = make_cfg(T=64, K=16, k=4)
        weights = SeaWeights.init(cfg, seed=4)
        Q, K, V = qkv_for(rng, cfg)
        masks = [sea_forward(Q, K, V, weights, cfg, k=k, diagnostics=True).diagnostics["mask"].pairs()
                 for k in (4, 8, 16, 32, 64)]
        for smaller, larger in zip(masks, masks[1:]):
            assert smaller < larger

    def test_dynamic_k_is_validated(self, small_cfg, small_weights, qkv_for, rng):
        with pytest.raises(ConfigValidationError):
            sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg, k=small_cfg.T + 1)

    def test_failure_names_the_stage(self, small_cfg, small_weights, rng):
        shape = (small_cfg.H, small_cfg.T, small_cfg.d)
        with pytest.raises(StageError) as info:
            sea_forward(rng.standard_normal(shape), rng.standard_normal(shape),
                        rng.standard_normal((small_cfg.H, small_cfg.T + 1, small_cfg.d)), small_weights, small_cfg)
        assert info.value.stage == "estimator"
        assert "estimator" in str(info.value)

    def test_single_precision(self, make_cfg, qkv_for, rng):
        cfg = make_cfg(precision="f32")
        out = sea_forward(*qkv_for(rng, cfg), SeaWeights.init(cfg, seed=1), cfg)
        assert out.c_sea.dtype == np.float32
        assert np.isfinite(out.c_sea.data).all()

    def test_work_is_attributed_to_stages(self, small_cfg, small_weights, qkv_for, rng):
        counter = WorkCounter()
        with counting(counter):
            out = sea_forward(*qkv_for(rng, small_cfg), small_weights, small_cfg, diagnostics=True)
        assert {"estimator", "mask", "sparse", "mix"} <= set(counter.wall_s)
        assert counter.total_macs("sparse") > 0
        assert counter.nnz == out.diagnostics["mask"].nnz


# =============================================================================
# Global context
# =============================================================================

class TestGlobalContext:

    def test_causal_prefix_average(self):
        V = np.array([[[1.0], [3.0]]])
        np.testing.assert_array_equal(global_context(None, V, causal=True).data, [[[1.0], [2.0]]])

    def test_uniform_importance_gives_value_mean(self, rng):
        a_hat = np.full((2, 8, 4), 0.25)
        V = rng.standard_normal((2, 8, 3))
        out = global_context(a_hat, V, causal=False).data
        assert out.shape == (2, 1, 3)
        np.testing.assert_allclose(out[:, 0], V.mean(axis=1), atol=1e-12)

    def test_importance_is_resized_and_normalized(self, rng):
        a_hat = rng.random((3, 8, 4))
        i = importance(DenseTensor(a_hat), 16).data
        assert i.shape == (3, 16)
        np.testing.assert_allclose(i.sum(axis=-1), 1.0, atol=1e-12)
        assert np.array_equal(i[:, 0], i[:, 1])


# =============================================================================
# Randomized sweeps
# =============================================================================

def sweep_config(rng: np.random.Generator, trial: int, T: int, causal_only: bool = False) -> SeaConfig:
    """Random layer cycling through every top-k̂ mode; causal where the mode allows it."""
    if causal_only:
        mode, causal = (TopKMode.PER_QUERY, TopKMode.CAUSAL_PER_BATCH)[trial % 2], True
    else:
        mode = list(TopKMode)[trial % 4]
        causal = mode in (TopKMode.PER_QUERY, TopKMode.CAUSAL_PER_BATCH) and bool(rng.integers(2))
    K = int(rng.choice([c for c in (8, 16, 32) if c <= T]))
    return SeaConfig.create(T=T, K=K, k=int(rng.integers(2, T + 1)), d=8,
                            H=int(rng.choice([1, 2, 4])), d_hidden=16, c_s=2, c_h=2, m=16,
                            mode=mode, causal=causal)


@pytest.mark.slow
class TestRandomizedSweeps:

    def test_sparse_matches_dense_emulation(self):
        rng = np.random.default_rng(11)
        seen = set()
        for trial in range(50):
            cfg = sweep_config(rng, trial, int(rng.choice([16, 64, 256])))
            seen.add((cfg.mode, cfg.causal))
            weights = SeaWeights.init(cfg, seed=trial)
            Q, K, V = random_qkv(rng, cfg)
            sparse = sea_forward(Q, K, V, weights, cfg)
            with no_grad():
                dense = dense_emulation(Q, K, V, weights, cfg)
            assert max_diff(sparse.c_sea.data, dense.c_sea.data) <= 1e-10, cfg
        assert {mode for mode, _ in seen} == set(TopKMode)
        assert {causal for _, causal in seen} == {False, True}

    def test_causal_prefix_under_random_perturbation(self):
        rng = np.random.default_rng(12)
        for trial in range(100):
            cfg = sweep_config(rng, trial, int(rng.choice([16, 64])), causal_only=True)
            weights = SeaWeights.init(cfg, seed=trial)
            Q, K, V = random_qkv(rng, cfg)
            cut = int(rng.integers(1, cfg.T))
            changed = [x.copy() for x in (Q, K, V)]
            for x in changed:
                x[:, cut:] += rng.standard_normal(x[:, cut:].shape)
            base = sea_forward(Q, K, V, weights, cfg).c_sea.data
            out = sea_forward(*changed, weights, cfg).c_sea.data
            assert np.array_equal(out[:, :cut], base[:, :cut]), (trial, cut, cfg)

    def test_bounded_inputs_stay_finite(self):
        rng = np.random.default_rng(13)
        for trial in range(1000):
            cfg = sweep_config(rng, trial, int(rng.choice([16, 32, 64])))
            weights = SeaWeights.init(cfg, seed=trial)
            Q, K, V = (rng.uniform(-10, 10, (cfg.H, cfg.T, cfg.d)) for _ in range(3))
            assert np.isfinite(sea_forward(Q, K, V, weights, cfg).c_sea.data).all(), (trial, cfg)
