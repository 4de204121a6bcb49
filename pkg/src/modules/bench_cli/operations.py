"""
Harness actions: verification suites, scaling benchmarks and attention dumps.
"""
import asyncio
import contextvars
import functools
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import psutil

from src.modules.base import BaseModule
from src.modules.bench_cli.bench import (
    RunMeasure,
    bench_inputs,
    dense_bytes,
    dense_row,
    run_dense,
    run_sea,
    sea_rows,
    to_csv,
)
from src.modules.bench_cli.pgm import write_pgm
from src.modules.bench_cli.suite_log import SuiteLog
from src.modules.bench_cli.suites import DEFAULT_SIZES, run_suites
from src.modules.distill import copy_task_batch, expand_compressed, load_toy_run
from src.modules.distill.operations import write_text
from src.modules.sea import SeaWeights
from src.modules.tensor_core import ConfigValidationError, SeaError, no_grad
from src.utils.config import Config, config as default_config
from src.utils.logger import get_logger, sea_logger

logger = get_logger("bench")


async def run_in_context(executor, fn, *args):
    """Run `fn` on the executor inside a copy of the caller's context (counters, fault hooks)."""
    loop = asyncio.get_running_loop()
    ctx = contextvars.copy_context()
    return await loop.run_in_executor(executor, functools.partial(ctx.run, fn, *args))


class BenchModule(BaseModule):
    """Correctness suites, work-counter benchmarks and diagnostic heatmaps."""
    name = 'bench'

    def __init__(self, cfg: Optional[Config] = None):
        self.cfg = cfg or default_config

    # =========================================================================
    # Verification
    # =========================================================================

    async def verify(
        self,
        seed: Optional[int] = None,
        sizes: Optional[Sequence[int]] = None,
        trials: int = 4,
        suites: Optional[Sequence[str]] = None,
    ) -> dict:
        """
        Run the verification suites.

        Args:
            seed: base seed for every suite
            sizes: sequence lengths to draw cases at (default 16, 32)
            trials: random cases per size where a suite samples
            suites: subset of suite names (default all)
        """
        seed = self.cfg.seed if seed is None else seed
        sizes = tuple(sizes) if sizes else DEFAULT_SIZES
        sea_logger.operation("verify", "started", f"seed={seed}, sizes={list(sizes)}")
        log = SuiteLog()
        try:
            results = await run_in_context(None, run_suites, seed, sizes, trials, log, suites)
        except KeyError as e:
            return self._error(str(e.args[0]), exit_code=2)

        report = {
            "seed": seed,
            "sizes": list(sizes),
            "suites": [r.as_dict() for r in results],
            "log": log.as_dict(),
        }
        failed = [r.name for r in results if not r.ok]
        if failed:
            sea_logger.operation("verify", "failed", ", ".join(failed))
            return self._error(f"{len(failed)} suite(s) failed: {', '.join(failed)}", exit_code=1, report=report)
        sea_logger.operation("verify", "completed", f"{len(results)} suites passed")
        return self._success(report=report)

    # =========================================================================
    # Benchmark
    # =========================================================================

    async def bench(
        self,
        seq_lens: Sequence[int],
        k: Optional[int] = None,
        K: Optional[int] = None,
        reps: int = 5,
        out: Optional[str] = None,
        threads: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> dict:
        """
        Count work and time the SEA layer and the dense reference at every T.

        Args:
            seq_lens: ascending sequence lengths
            k, K: mask budget and compressed length (config when omitted)
            reps: timed repetitions per T (counters come from the first)
            threads: worker threads for the repetitions, capped at the physical cores
        """
        seq_lens = [int(t) for t in seq_lens]
        if not seq_lens or any(b <= a for a, b in zip(seq_lens, seq_lens[1:])):
            return self._error(f"seq_lens must be strictly ascending, got {seq_lens}", exit_code=2)
        if reps < 1:
            return self._error(f"reps must be >= 1, got {reps}", exit_code=2)
        seed = self.cfg.seed if seed is None else seed
        cores = psutil.cpu_count(logical=False) or 1
        threads = max(1, min(threads or self.cfg.threads, cores))
        cap = self.cfg.dense_byte_cap
        sea_logger.operation("bench", "started", f"T={seq_lens}, reps={reps}, threads={threads}")

        try:
            configs = [self.cfg.sea_config(T=T, k=k, K=K) for T in seq_lens]
        except ConfigValidationError as e:
            sea_logger.operation("bench", "failed", str(e))
            return self._error(str(e), exit_code=2)

        rows = []
        macs = {"sea": [], "dense": []}
        process = psutil.Process()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for cfg in configs:
                weights = SeaWeights.init(cfg, seed=seed)
                inputs = bench_inputs(cfg, seed)
                sea_runs: list[RunMeasure] = await asyncio.gather(
                    *(run_in_context(pool, run_sea, cfg, weights, inputs) for _ in range(reps)))
                rows.extend(sea_rows(cfg, sea_runs))
                macs["sea"].append(sea_runs[0].counter.total_macs())

                if dense_bytes(cfg) > cap:
                    logger.warning(f"T={cfg.T}: dense reference needs {dense_bytes(cfg)} bytes > cap {cap}, recorded as OOM")
                    dense_runs = None
                    macs["dense"].append(None)
                else:
                    dense_runs = await asyncio.gather(
                        *(run_in_context(pool, run_dense, cfg, inputs) for _ in range(reps)))
                    macs["dense"].append(dense_runs[0].counter.total_macs())
                rows.append(dense_row(cfg, dense_runs))
                logger.info(f"T={cfg.T}: sea {macs['sea'][-1]} MACs, dense {macs['dense'][-1]} MACs, "
                            f"rss {process.memory_info().rss / 2**20:.1f} MiB")

        def ratios(values: list) -> list:
            return [None if a is None or b is None else b / a for a, b in zip(values, values[1:])]

        csv = to_csv(rows)
        written = {"out": str(await write_text(out, csv))} if out else {}
        sea_logger.operation("bench", "completed", f"{len(rows)} rows")
        return self._success(
            csv=csv,
            rows=[r.__dict__ for r in rows],
            sea_ratios=ratios(macs["sea"]),
            dense_ratios=ratios(macs["dense"]),
            threads=threads,
            **written,
        )

    # =========================================================================
    # Attention dumps
    # =========================================================================

    async def dump_attn(
        self,
        weights: str,
        out: str,
        tokens: Optional[Sequence[int]] = None,
        seed: Optional[int] = None,
        layer: int = 0,
    ) -> dict:
        """
        Write per-head heatmaps of one student layer and the matching teacher layer.

        Images: a_hat (T x K), a_hat_expanded, m_hat, mask, a_star and teacher
        (T x T), one file per head, e.g. `mask_h0.pgm`.
        """
        seed = self.cfg.seed if seed is None else seed
        p = Path(weights)
        if not p.exists():
            return self._error(f"Weights file does not exist: {weights}")
        sea_logger.operation("dump-attn", "started", f"{weights} -> {out}")
        try:
            teacher, student, _ = load_toy_run(p)
            T = student.sea_cfg.T
            if tokens is None:
                sample = copy_task_batch(np.random.default_rng([seed, 19]), 1, T, teacher.cfg.vocab).tokens[0]
            else:
                sample = np.asarray(tokens, dtype=np.int64)
                if sample.shape != (T,) or sample.min() < 0 or sample.max() >= teacher.cfg.vocab:
                    return self._error(f"tokens must be {T} symbols in [0, {teacher.cfg.vocab})", exit_code=2)
            if not 0 <= layer < teacher.cfg.n_layers:
                return self._error(f"layer must lie in [0, {teacher.cfg.n_layers}), got {layer}", exit_code=2)

            trace = student.forward(sample, sparse=True)
            diag = trace.diagnostics[layer]
            with no_grad():
                teacher_attn = teacher.forward(sample).attn[layer].data
                expanded = expand_compressed(diag["a_hat"], T, student.sea_cfg.causal).data
        except SeaError as e:
            sea_logger.operation("dump-attn", "failed", str(e))
            return self._error(str(e))

        buffers = {
            "a_hat": diag["a_hat"],
            "a_hat_expanded": expanded,
            "m_hat": diag["m_hat"].astype(np.float64),
            "mask": diag["mask"].densify().data,
            "a_star": diag["a_star"].densify().data,
            "teacher": teacher_attn,
        }
        images = []
        for name, stack in buffers.items():
            for h in range(stack.shape[0]):
                images.append(str(await write_pgm(Path(out) / f"{name}_h{h}.pgm", stack[h])))
        sea_logger.operation("dump-attn", "completed", f"{len(images)} images")
        return self._success(images=images, layer=layer, tokens=sample.tolist())
