"""
Verification suites run by `verify`.

Each suite draws its cases from one seeded generator and counts passed and
failed checks. A check that raises counts as failed; the exception is
logged and the suite moves on.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.modules.bench_cli.suite_log import SuiteLog
from src.modules.distill import LayerLosses, total_loss
from src.modules.mask import TopKMode, compress_k, grouped_topk, interpolate_mask
from src.modules.performer import FeatureMap, favor_plus
from src.modules.reference_oracle import dense_attention, dense_emulation, dense_interpolate_mask
from src.modules.sea import SeaConfig, SeaWeights, sea_forward
from src.modules.tensor_core import DenseTensor, Tape, no_grad, ops

EQUIVALENCE_TOL = 1e-10
GRAD_TOL = 1e-4

DEFAULT_SIZES = (16, 32)


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.passed > 0

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "failed": self.failed, "ok": self.ok}


class Suite:
    """Check bookkeeping shared by every suite."""

    def __init__(self, name: str, log: SuiteLog):
        self.result = SuiteResult(name)
        self.log = log

    def check(self, condition: bool, what: str) -> bool:
        if condition:
            self.result.passed += 1
        else:
            self.result.failed += 1
            self.log.append(f"[{self.result.name}] {what}", "Error")
        return bool(condition)

    def case(self, what: str, fn: Callable[[], bool]) -> bool:
        try:
            return self.check(fn(), what)
        except Exception as e:
            return self.check(False, f"{what}: {type(e).__name__}: {e}")


# =============================================================================
# Random cases
# =============================================================================

def random_config(rng: np.random.Generator, T: int, causal: Optional[bool] = None,
                  mode: Optional[TopKMode] = None, k: Optional[int] = None) -> SeaConfig:
    """Small random SEA layer: K from {4, 8, 16, 32} up to T, H from {1, 2, 4}, k in [2, T]."""
    causal = bool(rng.integers(2)) if causal is None else causal
    if mode is None:
        modes = [TopKMode.CAUSAL_PER_BATCH, TopKMode.PER_QUERY] if causal else list(TopKMode)
        mode = modes[int(rng.integers(len(modes)))]
    K = int(rng.choice([c for c in (4, 8, 16, 32) if c <= T]))
    H = int(rng.choice([1, 2, 4]))
    k = int(rng.integers(min(2, T), T + 1)) if k is None else k
    return SeaConfig.create(T=T, K=K, k=k, d=8, H=H, d_hidden=16, c_s=2, c_h=2, m=16,
                            mode=mode, causal=causal)


def random_qkv(rng: np.random.Generator, cfg: SeaConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    shape = (cfg.H, cfg.T, cfg.d)
    return rng.standard_normal(shape), rng.standard_normal(shape), rng.standard_normal(shape)


def random_compressed(rng: np.random.Generator, H: int, T: int, K: int) -> np.ndarray:
    a = rng.random((H, T, K)) + 1e-3
    return a / a.sum(axis=-1, keepdims=True)


def _max_diff(a, b) -> float:
    a = a.data if isinstance(a, DenseTensor) else np.asarray(a)
    b = b.data if isinstance(b, DenseTensor) else np.asarray(b)
    return float(np.max(np.abs(a - b)))


def _layer_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(1 << 30))


# =============================================================================
# Suites
# =============================================================================

def oracle_equivalence(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """sea_forward against dense_emulation on identical weights."""
    for T in sizes:
        for _ in range(trials):
            cfg = random_config(rng, T)
            weights = SeaWeights.init(cfg, seed=_layer_seed(rng))
            Q, K, V = random_qkv(rng, cfg)

            def compare() -> bool:
                sparse = sea_forward(Q, K, V, weights, cfg)
                with no_grad():
                    dense = dense_emulation(Q, K, V, weights, cfg)
                return _max_diff(sparse.c_sea, dense.c_sea) <= EQUIVALENCE_TOL

            suite.case(f"T={T} H={cfg.H} K={cfg.K} k={cfg.k} {cfg.mode.value} causal={cfg.causal}", compare)


def full_mask_limit(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """k = T with both scalers forced to one is dense attention."""
    for T in [t for t in sizes if t <= 64]:
        for causal in (False, True):
            cfg = random_config(rng, T, causal=causal, mode=TopKMode.PER_QUERY, k=T)
            weights = SeaWeights.init(cfg, seed=_layer_seed(rng))
            Q, K, V = random_qkv(rng, cfg)

            def compare() -> bool:
                out = sea_forward(Q, K, V, weights, cfg, force_s_prob=1.0, force_s_mix=1.0)
                return _max_diff(out.c_sea, dense_attention(Q, K, V, causal=causal)) <= EQUIVALENCE_TOL

            suite.case(f"T={T} causal={causal}", compare)


def causality(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Perturbing a suffix of the inputs leaves every earlier output row bit-exact."""
    for T in sizes:
        for _ in range(trials):
            cfg = random_config(rng, T, causal=True)
            weights = SeaWeights.init(cfg, seed=_layer_seed(rng))
            Q, K, V = random_qkv(rng, cfg)
            cut = int(rng.integers(1, T))
            Q2, K2, V2 = (x.copy() for x in (Q, K, V))
            for x in (Q2, K2, V2):
                x[:, cut:] += rng.standard_normal(x[:, cut:].shape)

            def compare() -> bool:
                a = sea_forward(Q, K, V, weights, cfg).c_sea.data
                b = sea_forward(Q2, K2, V2, weights, cfg).c_sea.data
                return np.array_equal(a[:, :cut], b[:, :cut])

            suite.case(f"T={T} cut={cut} {cfg.mode.value}", compare)


def mask_budgets(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Group counts of M̂, nnz(M*) <= H*T*k and no future columns in causal masks."""
    for T in sizes:
        for mode in TopKMode:
            for causal in (False, True):
                if causal and mode not in (TopKMode.CAUSAL_PER_BATCH, TopKMode.PER_QUERY):
                    continue
                cfg = random_config(rng, T, causal=causal, mode=mode)
                a_hat = random_compressed(rng, cfg.H, T, cfg.K)
                k_hat = compress_k(cfg.k, cfg.K, T)
                m_hat = grouped_topk(a_hat, mode, k_hat)
                counts = m_hat.groups().sum(axis=1)
                suite.check(bool(np.all(counts == m_hat.group_budget())),
                            f"{mode.value} T={T}: group counts {np.unique(counts)} != {m_hat.group_budget()}")

                def budget() -> bool:
                    m_star = interpolate_mask(m_hat, T, cfg.k, causal)
                    _, query, key = m_star.coords()
                    within = m_star.nnz <= cfg.H * T * cfg.k
                    return within and (not causal or bool(np.all(key <= query)))

                suite.case(f"{mode.value} T={T} k={cfg.k} causal={causal} budget", budget)


def interpolation_equivalence(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Sparse interpolation against the brute-force resize, as sets of (head, query, key)."""
    for T in sizes:
        for K in [c for c in (4, 8, 16) if c <= T]:
            for k in [c for c in (1, 2, 4, 8) if c <= T]:
                causal = bool(rng.integers(2))
                modes = [TopKMode.CAUSAL_PER_BATCH, TopKMode.PER_QUERY] if causal else list(TopKMode)
                mode = modes[int(rng.integers(len(modes)))]
                H = int(rng.choice([1, 2]))
                m_hat = grouped_topk(random_compressed(rng, H, T, K), mode, compress_k(k, K, T))

                def compare() -> bool:
                    sparse = interpolate_mask(m_hat, T, k, causal).pairs()
                    dense = set(zip(*(a.tolist() for a in np.nonzero(dense_interpolate_mask(m_hat, T, k, causal)))))
                    return sparse == dense

                suite.case(f"T={T} K={K} k={k} {mode.value} causal={causal}", compare)


def favor_quality(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Performer error against exact attention shrinks with the feature count."""
    T, d, draws = 8, 4, max(trials, 20)
    errors = {64: [], 4096: [], 8192: []}
    for _ in range(draws):
        Q, K, V = (0.5 * rng.standard_normal((1, T, d)) for _ in range(3))
        exact = dense_attention(Q, K, V).data
        seed = _layer_seed(rng)
        for m, sink in errors.items():
            approx = favor_plus(Q, K, V, FeatureMap.create(d, m, seed=seed)).data
            sink.append(float(np.max(np.abs(approx - exact))))
    median = float(np.median(errors[8192]))
    suite.check(median < 0.1, f"median error at m=8192 is {median:.4f}")
    wins = sum(large < small for large, small in zip(errors[4096], errors[64]))
    suite.check(wins >= math.ceil(0.9 * draws), f"m=4096 beat m=64 in only {wins}/{draws} draws")


def _grad_error(fn: Callable[[DenseTensor], DenseTensor], x: np.ndarray, rng: np.random.Generator) -> float:
    """Relative error of the tape gradient of sum(w * fn(x)) against central differences."""
    contraction = None
    with Tape() as tape:
        xt = DenseTensor(x.copy(), requires_grad=True)
        out = fn(xt)
        contraction = rng.standard_normal(out.shape)
        tape.backward(ops.sum(ops.mul(out, contraction)))
    analytic = xt.grad

    def value(arr: np.ndarray) -> float:
        with no_grad():
            return float(np.sum(fn(DenseTensor(arr)).data * contraction))

    numeric = np.zeros_like(x)
    h = 1e-6
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        numeric[idx] = (value(up) - value(down)) / (2 * h)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))


def gradient_checks(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Tape gradients of the differentiable ops against finite differences."""
    weight = rng.standard_normal((2, 2, 3, 3))
    mat = rng.standard_normal((4, 3))
    causal = np.tril(np.ones((4, 4), dtype=bool))
    cases = {
        "gelu": (lambda x: ops.gelu(x), (3, 4)),
        "sigmoid": (lambda x: ops.sigmoid(x), (3, 4)),
        "matmul": (lambda x: ops.matmul(x, mat), (2, 4)),
        "softmax": (lambda x: ops.softmax_lastdim(x), (3, 5)),
        "masked softmax": (lambda x: ops.softmax_lastdim(x, mask=causal), (4, 4)),
        "log_softmax": (lambda x: ops.log_softmax_lastdim(x), (3, 5)),
        "conv2d": (lambda x: ops.conv2d(x, weight), (2, 4, 5)),
        "strided conv2d": (lambda x: ops.conv2d(x, weight, stride=(2, 1)), (2, 4, 5)),
        "causal conv2d": (lambda x: ops.conv2d(x, weight, causal=True), (2, 4, 5)),
        "nn_interpolate": (lambda x: ops.nn_interpolate(x, 7, axis=-1), (3, 4)),
        "cumsum": (lambda x: ops.cumsum(x, axis=-2), (4, 3)),
    }
    for name, (fn, shape) in cases.items():
        x = rng.standard_normal(shape)
        suite.case(f"{name} gradient", lambda fn=fn, x=x: _grad_error(fn, x, rng) < GRAD_TOL)


def loss_bookkeeping(rng: np.random.Generator, sizes: Sequence[int], trials: int, suite: Suite) -> None:
    """Weighted breakdown terms sum to the returned total."""
    for _ in range(trials):
        L = int(rng.integers(1, 4))
        layers = [LayerLosses(*(DenseTensor(float(v)) for v in rng.random(4))) for _ in range(L)]
        total, breakdown = total_loss(layers, DenseTensor(float(rng.random())), DenseTensor(float(rng.random())))
        parts = [v for key, v in breakdown.as_dict().items() if key != "total"]
        suite.check(abs(sum(parts) - total.item()) <= 1e-12, f"L={L}: breakdown {sum(parts)} != total {total.item()}")


SUITES: dict[str, Callable[[np.random.Generator, Sequence[int], int, Suite], None]] = {
    "oracle_equivalence": oracle_equivalence,
    "full_mask_limit": full_mask_limit,
    "causality": causality,
    "mask_budgets": mask_budgets,
    "interpolation_equivalence": interpolation_equivalence,
    "favor_quality": favor_quality,
    "gradient_checks": gradient_checks,
    "loss_bookkeeping": loss_bookkeeping,
}


def run_suites(seed: int, sizes: Sequence[int] = DEFAULT_SIZES, trials: int = 4,
               log: Optional[SuiteLog] = None, names: Optional[Sequence[str]] = None) -> list[SuiteResult]:
    """Run the named suites (all by default), each from its own generator derived from `seed`."""
    log = log or SuiteLog()
    selected = list(names) if names else list(SUITES)
    unknown = [n for n in selected if n not in SUITES]
    if unknown:
        raise KeyError(f"Unknown suite(s): {', '.join(unknown)}")

    results = []
    order = list(SUITES)
    for name in selected:
        log.set_status(f"running {name}")
        suite = Suite(name, log)
        SUITES[name](np.random.default_rng([seed, order.index(name)]), sizes, trials, suite)
        result = suite.result
        level = "Success" if result.ok else "Error"
        log.append(f"{name}: {result.passed} passed, {result.failed} failed", level)
        results.append(result)
    log.set_status("done")
    return results
