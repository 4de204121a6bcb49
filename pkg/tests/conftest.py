"""
Shared fixtures for the SEA engine tests.

Logs go to a temporary directory so test runs never touch logs/ops.log.
Slow acceptance runs are skipped unless pytest is started with --runslow.
"""
import os
import tempfile

os.environ.setdefault("SEA_LOG_DIR", tempfile.mkdtemp(prefix="sea-test-logs-"))

import numpy as np
import pytest

from src.modules.distill import ToyConfig, pretrain_teacher
from src.modules.sea import SeaConfig, SeaWeights
from src.modules.tensor_core import DenseTensor, Tape, no_grad, ops


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# Random state
# =============================================================================

@pytest.fixture
def rng():
    return np.random.default_rng(42)


# =============================================================================
# Small attention layers
# =============================================================================

def make_config(**overrides) -> SeaConfig:
    fields = dict(T=16, K=8, k=4, d=8, H=2, d_hidden=16, c_s=2, c_h=2, m=16)
    fields.update(overrides)
    return SeaConfig.create(**fields)


@pytest.fixture
def make_cfg():
    return make_config


@pytest.fixture
def qkv_for():
    return random_qkv


@pytest.fixture
def small_cfg() -> SeaConfig:
    return make_config()


@pytest.fixture
def causal_cfg() -> SeaConfig:
    return make_config(causal=True)


@pytest.fixture
def small_weights(small_cfg) -> SeaWeights:
    return SeaWeights.init(small_cfg, seed=7)


def random_qkv(rng: np.random.Generator, cfg: SeaConfig):
    shape = (cfg.H, cfg.T, cfg.d)
    return tuple(rng.standard_normal(shape) for _ in range(3))


# =============================================================================
# Gradient checking
# =============================================================================

def gradient_error(fn, *arrays, h: float = 1e-6) -> float:
    """
    Worst relative error between tape gradients and central differences.

    The output is contracted with fixed random weights so every output cell
    contributes to the scalar loss.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [DenseTensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
        contraction = np.random.default_rng(1234).standard_normal(out.shape)
        tape.backward(ops.sum(ops.mul(out, contraction)))

    def loss_at(values) -> float:
        with no_grad():
            return float(np.sum(fn(*[DenseTensor(v) for v in values]).data * contraction))

    worst = 0.0
    for i, base in enumerate(arrays):
        analytic = np.zeros_like(base) if leaves[i].grad is None else leaves[i].grad
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            numeric[idx] = (loss_at(plus) - loss_at(minus)) / (2 * h)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst


@pytest.fixture
def grad_error():
    return gradient_error


# =============================================================================
# Toy teacher
# =============================================================================

@pytest.fixture(scope="session")
def copy_teacher():
    """Copy-task teacher pretrained once per session; only the slow acceptance runs use it."""
    teacher, _ = pretrain_teacher(ToyConfig(), steps=600, seed=0)
    return teacher
