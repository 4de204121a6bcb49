"""
Tests for the distillation losses, optimizers and the toy training loop.
"""
import math

import numpy as np
import pytest

from src.modules.distill import (
    SGD,
    Adam,
    LayerLosses,
    LossBreakdown,
    LossWeights,
    ParamGroup,
    SeaStudent,
    ToyConfig,
    ToyTransformer,
    copy_task_batch,
    dynamic_k_sweep,
    evaluate_task,
    expand_compressed,
    kl_divergence,
    load_toy_run,
    loss_approx,
    loss_kd_task,
    make_optimizer,
    pretrain_teacher,
    save_toy_run,
    task_loss,
    total_loss,
    train_toy,
)
from src.modules.distill.train import sample_losses, teacher_arrays
from src.modules.estimator import Linear
from src.modules.sea import SeaConfig
from src.modules.tensor_core import (
    ConfigValidationError,
    ContractError,
    DenseTensor,
    DimensionError,
    save_weights,
)


def stochastic(rng, *shape):
    p = rng.random(shape) + 1e-3
    return p / p.sum(axis=-1, keepdims=True)


@pytest.fixture
def tiny_toy() -> ToyConfig:
    return ToyConfig(vocab=8, T=8, H=2, d=4, n_layers=1, causal=True)


@pytest.fixture
def tiny_sea() -> SeaConfig:
    return SeaConfig.create(T=8, K=4, k=2, d=4, H=2, d_hidden=8, c_s=2, c_h=2, m=8, causal=True)


@pytest.fixture
def tiny_teacher(tiny_toy) -> ToyTransformer:
    teacher, _ = pretrain_teacher(tiny_toy, steps=10, seed=0, batch_size=4)
    return teacher


# =============================================================================
# Losses
# =============================================================================

class TestKlDivergence:

    def test_identical_distributions(self, rng):
        p = stochastic(rng, 3, 5)
        assert abs(kl_divergence(p, p).item()) <= 1e-12

    def test_point_mass_against_uniform(self):
        assert kl_divergence(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-9)

    def test_mean_over_rows(self):
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        q = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert kl_divergence(p, q).item() == pytest.approx(math.log(2) / 2, abs=1e-9)

    def test_shapes_must_agree(self):
        with pytest.raises(DimensionError):
            kl_divergence(np.ones((2, 3)) / 3, np.ones((3, 2)) / 2)


class TestLayerTerms:

    def test_expand_compressed_rows_are_stochastic(self, rng):
        a_hat = stochastic(rng, 2, 8, 4)
        full = expand_compressed(a_hat, 8, causal=False).data
        np.testing.assert_allclose(full.sum(axis=-1), 1.0, atol=1e-12)
        causal = expand_compressed(a_hat, 8, causal=True).data
        np.testing.assert_allclose(causal.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(causal[:, ~np.tri(8, dtype=bool)] == 0)
        assert np.all(causal[:, 0, 0] == 1.0)

    def test_expand_without_resize_is_identity(self, rng):
        a_hat = stochastic(rng, 1, 4, 4)
        np.testing.assert_allclose(expand_compressed(a_hat, 4, causal=False).data, a_hat, atol=1e-15)

    def test_teacher_attention_must_be_stochastic(self, rng):
        with pytest.raises(ContractError):
            loss_approx(stochastic(rng, 1, 4, 2), np.full((1, 4, 4), 0.3))

    def test_task_loss_of_uniform_logits(self):
        logits = np.zeros((6, 5))
        assert task_loss(logits, np.arange(6) % 5).item() == pytest.approx(math.log(5), abs=1e-12)
        mask = np.array([True, False, True, False, False, False])
        assert task_loss(logits, np.zeros(6), mask).item() == pytest.approx(math.log(5), abs=1e-12)

    def test_task_loss_needs_positions(self):
        with pytest.raises(ContractError):
            task_loss(np.zeros((2, 3)), np.zeros(2), np.zeros(2, dtype=bool))

    def test_kd_task_of_identical_logits(self, rng):
        logits = rng.standard_normal((4, 6))
        assert abs(loss_kd_task(logits, logits).item()) <= 1e-12


class TestTotalLoss:

    def test_distillation_weight_applies(self):
        layer = LayerLosses(*(DenseTensor(v) for v in (0.0, 0.0, 0.0, 1.0)))
        total, breakdown = total_loss([layer])
        assert breakdown.L_kd == pytest.approx(5.0)
        assert total.item() == pytest.approx(5.0)

    def test_breakdown_sums_to_total(self, rng):
        layers = [LayerLosses(*(DenseTensor(v) for v in rng.random(4))) for _ in range(3)]
        total, breakdown = total_loss(layers, DenseTensor(rng.random()), DenseTensor(rng.random()))
        parts = [v for key, v in breakdown.as_dict().items() if key != "total"]
        assert abs(sum(parts) - total.item()) <= 1e-12
        assert breakdown.total == total.item()

    def test_layers_are_averaged(self):
        one = LayerLosses(*(DenseTensor(v) for v in (1.0, 0.0, 0.0, 0.0)))
        three = LayerLosses(*(DenseTensor(v) for v in (3.0, 0.0, 0.0, 0.0)))
        _, breakdown = total_loss([one, three])
        assert breakdown.L_approx == pytest.approx(2.0)

    def test_rejects_negative_weights_and_no_layers(self):
        with pytest.raises(ContractError):
            LossWeights(w_kd=-1.0)
        with pytest.raises(ContractError):
            total_loss([])

    def test_csv_row(self):
        row = LossBreakdown(1.0, 2.0, 0.5, 0.25, 0.0, 0.0, 3.75).csv_row(7)
        assert row == "7, 1.0, 2.0, 0.5, 0.25, 0.0, 0.0, 3.75"
        assert len(LossBreakdown.CSV_HEADER.split(", ")) == len(row.split(", "))


# =============================================================================
# Optimizers and data
# =============================================================================

class TestOptimizers:

    def test_sgd_step(self):
        p = DenseTensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.array([0.5, -1.0])
        opt = SGD([ParamGroup([p], 0.1)])
        opt.step()
        np.testing.assert_allclose(p.data, [0.95, 2.1])
        opt.zero_grad()
        assert p.grad is None

    def test_adam_first_step_moves_by_lr(self):
        p = DenseTensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        Adam([ParamGroup([p], 0.01)]).step()
        np.testing.assert_allclose(p.data, [0.99, 2.01], atol=1e-8)

    def test_groups_keep_their_own_rate(self):
        a = DenseTensor(np.zeros(1), requires_grad=True)
        b = DenseTensor(np.zeros(1), requires_grad=True)
        a.grad = b.grad = np.ones(1)
        make_optimizer("sgd", [ParamGroup([a], 1e-1), ParamGroup([b], 1e-2)]).step()
        assert (a.data[0], b.data[0]) == (pytest.approx(-0.1), pytest.approx(-0.01))

    def test_unknown_optimizer(self):
        with pytest.raises(ConfigValidationError):
            make_optimizer("lbfgs", [])


class TestCopyTask:

    def test_second_half_repeats_first(self, rng):
        batch = copy_task_batch(rng, 3, 10, 7)
        assert np.array_equal(batch.tokens[:, :5], batch.tokens[:, 5:])
        assert np.array_equal(batch.targets[:, :-1], batch.tokens[:, 1:])
        assert batch.loss_mask[:, 4:9].all() and batch.loss_mask.sum() == 3 * 5
        assert batch.tokens.max() < 7

    @pytest.mark.parametrize("T", [2, 7])
    def test_rejects_bad_lengths(self, rng, T):
        with pytest.raises(ConfigValidationError):
            copy_task_batch(rng, 1, T, 4)


# =============================================================================
# Toy model and training
# =============================================================================

class TestToyModel:

    def test_student_must_fit_backbone(self, tiny_teacher):
        wrong = SeaConfig.create(T=8, K=4, k=2, d=8, H=2, d_hidden=8, c_s=2, c_h=2, m=8, causal=True)
        with pytest.raises(ConfigValidationError):
            SeaStudent.from_teacher(tiny_teacher, wrong)

    def test_sparse_and_dense_student_agree(self, tiny_teacher, tiny_sea, rng):
        student = SeaStudent.from_teacher(tiny_teacher, tiny_sea, seed=1)
        tokens = copy_task_batch(rng, 1, 8, 8).tokens[0]
        dense = student.forward(tokens).logits.data
        sparse = student.forward(tokens, sparse=True)
        np.testing.assert_allclose(sparse.logits.data, dense, atol=1e-9)
        assert len(sparse.diagnostics) == tiny_teacher.cfg.n_layers

    def test_end_to_end_gradient(self, tiny_teacher, tiny_sea, rng, grad_error):
        student = SeaStudent.from_teacher(tiny_teacher, tiny_sea, seed=2)
        batch = copy_task_batch(rng, 1, 8, 8)
        reference = teacher_arrays(tiny_teacher, batch.tokens)
        est = student.sea[0].estimator
        prob_bias, pool_bias = est.f_prob.bias, est.f_pool.bias

        def objective(w_prob, w_pool):
            est.f_prob = Linear(w_prob, prob_bias)
            est.f_pool = Linear(w_pool, pool_bias)
            trace = student.forward(batch.tokens[0])
            return sample_losses(student, trace, reference, 0, batch, LossWeights())[0]

        assert grad_error(objective, est.f_prob.weight.data, est.f_pool.weight.data) < 1e-3


class TestTrainToy:

    def test_zero_steps_logs_initial_evaluation(self, tiny_teacher, tiny_sea):
        _, log = train_toy(tiny_teacher, tiny_sea, 0, (1e-3, 1e-4), batch_size=2, val_size=2)
        assert len(log.rows) == 1 and log.rows[0][0] == 0
        csv = log.to_csv().splitlines()
        assert "# lr_sea=0.001" in csv and "# lr_backbone=0.0001" in csv
        assert LossBreakdown.CSV_HEADER in csv
        assert csv[-1].startswith("0, ")

    def test_negative_steps(self, tiny_teacher, tiny_sea):
        with pytest.raises(ContractError):
            train_toy(tiny_teacher, tiny_sea, -1)

    def test_short_run_reduces_loss(self, tiny_teacher, tiny_sea):
        _, log = train_toy(tiny_teacher, tiny_sea, 20, (5e-3, 5e-4), batch_size=2, val_size=2, optimizer="adam")
        assert len(log.rows) == 21
        assert log.final.total < log.initial.total

    def test_dynamic_k(self, tiny_teacher, tiny_sea, rng):
        student = SeaStudent.from_teacher(tiny_teacher, tiny_sea)
        batch = copy_task_batch(rng, 2, 8, 8)
        rows = dynamic_k_sweep(student, [1, 2, 8], batch)
        assert [k for k, _ in rows] == [1, 2, 8]
        assert all(math.isfinite(loss) for _, loss in rows)
        with pytest.raises(ConfigValidationError):
            dynamic_k_sweep(student, [2, 9], batch)

    def test_weights_file_round_trip(self, tiny_teacher, tiny_sea, tmp_path):
        student = SeaStudent.from_teacher(tiny_teacher, tiny_sea, seed=3)
        path = save_toy_run(tmp_path / "run.bin", tiny_teacher, student, {"k_train": 2})
        teacher2, student2, metadata = load_toy_run(path)
        assert metadata["k_train"] == 2 and student2.sea_cfg == tiny_sea
        for name, p in student.named_parameters().items():
            expected = p.data.astype(np.float32).astype(np.float64)
            assert np.array_equal(student2.named_parameters()[name].data, expected), name
        assert teacher2.cfg == tiny_teacher.cfg

    def test_weights_file_needs_configuration(self, tmp_path):
        path = save_weights(tmp_path / "bare.bin", {"x": np.zeros(2)})
        with pytest.raises(ContractError):
            load_toy_run(path)


# =============================================================================
# Acceptance (slow)
# =============================================================================

@pytest.mark.slow
class TestToyDistillation:

    SEA = dict(T=32, K=8, k=8, d=16, H=2, d_hidden=32, c_s=2, c_h=4, m=64, causal=True)

    def test_distillation_beats_task_only_training(self, copy_teacher):
        sea_cfg = SeaConfig.create(**self.SEA)
        wins = 0
        for seed in range(5):
            student, log = train_toy(copy_teacher, sea_cfg, 500, seed=seed)
            _, baseline = train_toy(copy_teacher, sea_cfg, 500, seed=seed, task_only=True)
            assert log.header["optimizer"] == "sgd" and log.header["lr_sea"] == 1e-4
            assert log.final.total < 0.5 * log.initial.total, seed
            wins += log.val_task[-1] < baseline.val_task[-1]
        assert wins >= 4

    def test_larger_k_does_not_hurt(self, copy_teacher):
        sea_cfg = SeaConfig.create(**self.SEA)
        student, _ = train_toy(copy_teacher, sea_cfg, 500)
        batch = copy_task_batch(np.random.default_rng(5), 8, 32, copy_teacher.cfg.vocab)
        losses = dict(dynamic_k_sweep(student, [1, sea_cfg.k, 32], batch))
        assert losses[32] <= losses[1]
        assert evaluate_task(copy_teacher, batch) < math.log(copy_teacher.cfg.vocab)

    def test_adaptive_optimizer_variant(self, copy_teacher):
        sea_cfg = SeaConfig.create(**self.SEA)
        _, log = train_toy(copy_teacher, sea_cfg, 200, (1e-3, 1e-4), optimizer="adam")
        assert log.header["optimizer"] == "adam"
        assert log.final.total < 0.5 * log.initial.total
