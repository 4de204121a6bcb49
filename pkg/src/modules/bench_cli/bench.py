"""
Scaling benchmark: work counters of the SEA layer against the dense
quadratic reference as T grows.
"""
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.modules.reference_oracle import dense_attention
from src.modules.sea import SeaConfig, SeaWeights, sea_forward
from src.modules.tensor_core import no_grad
from src.utils.counters import WorkCounter, counting, stage

SEA_STAGES = ("estimator", "mask", "sparse", "mix")
CSV_HEADER = "T,stage,MACs,nnz,wall_ms,bytes"


@dataclass
class BenchRow:
    T: int
    stage: str
    macs: Optional[int]          # None when the dense reference was skipped
    nnz: int
    wall_ms: float
    bytes: int

    def csv(self) -> str:
        macs = "OOM" if self.macs is None else str(self.macs)
        wall = "OOM" if self.macs is None else f"{self.wall_ms:.3f}"
        return f"{self.T},{self.stage},{macs},{self.nnz},{wall},{self.bytes}"


@dataclass
class RunMeasure:
    counter: WorkCounter
    wall_s: float


def dense_bytes(cfg: SeaConfig) -> int:
    """Analytic footprint of the dense reference: scores and probabilities, H x T x T each."""
    return 2 * cfg.H * cfg.T * cfg.T * cfg.dtype.itemsize


def bench_inputs(cfg: SeaConfig, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, cfg.T])
    shape = (cfg.H, cfg.T, cfg.d)
    return tuple(rng.standard_normal(shape).astype(cfg.dtype) for _ in range(3))


def run_sea(cfg: SeaConfig, weights: SeaWeights, inputs) -> RunMeasure:
    counter = WorkCounter()
    started = time.perf_counter()
    with counting(counter):
        sea_forward(*inputs, weights, cfg)
    return RunMeasure(counter, time.perf_counter() - started)


def run_dense(cfg: SeaConfig, inputs) -> RunMeasure:
    counter = WorkCounter()
    started = time.perf_counter()
    with counting(counter), stage("dense"), no_grad():
        dense_attention(*inputs, causal=cfg.causal)
    return RunMeasure(counter, time.perf_counter() - started)


def sea_rows(cfg: SeaConfig, runs: list[RunMeasure]) -> list[BenchRow]:
    """One row per pipeline stage plus the layer total; wall time is the median over runs."""
    first = runs[0].counter
    rows = []
    for name in SEA_STAGES:
        wall = float(np.median([r.counter.wall_s.get(name, 0.0) for r in runs])) * 1e3
        nnz = first.nnz if name in ("mask", "sparse") else 0
        rows.append(BenchRow(cfg.T, name, first.total_macs(name), nnz, wall, first.peak_bytes.get(name, 0)))
    total_bytes = max((first.peak_bytes.get(name, 0) for name in SEA_STAGES), default=0)
    rows.append(BenchRow(cfg.T, "sea", first.total_macs(*SEA_STAGES), first.nnz,
                         float(np.median([r.wall_s for r in runs])) * 1e3, total_bytes))
    return rows


def dense_row(cfg: SeaConfig, runs: Optional[list[RunMeasure]]) -> BenchRow:
    if runs is None:
        return BenchRow(cfg.T, "dense", None, 0, 0.0, dense_bytes(cfg))
    first = runs[0].counter
    return BenchRow(cfg.T, "dense", first.total_macs("dense"), 0,
                    float(np.median([r.wall_s for r in runs])) * 1e3, dense_bytes(cfg))


def to_csv(rows: list[BenchRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"
