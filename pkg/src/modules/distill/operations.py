"""
Distillation actions: toy training runs and dynamic-k sweeps.
"""
from pathlib import Path
from typing import Optional, Sequence

import aiofiles
import numpy as np

from src.modules.base import BaseModule
from src.modules.distill.toy import ToyConfig, copy_task_batch
from src.modules.distill.train import dynamic_k_sweep, load_toy_run, pretrain_teacher, save_toy_run, train_toy
from src.modules.tensor_core import ConfigValidationError, SeaError
from src.utils.config import Config, config as default_config
from src.utils.logger import get_logger, sea_logger

logger = get_logger("distill")


async def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8", newline="\n") as f:
        await f.write(text)
    return path


class DistillModule(BaseModule):
    """Toy-scale distillation of a quadratic teacher into SEA attention."""
    name = 'distill'

    def __init__(self, cfg: Optional[Config] = None):
        self.cfg = cfg or default_config

    def toy_config(self, T: int = 32) -> ToyConfig:
        return ToyConfig(vocab=self.cfg.vocab_size, T=T, H=self.cfg.num_heads, d=self.cfg.head_dim,
                         n_layers=self.cfg.num_layers, causal=True)

    # =========================================================================
    # Training
    # =========================================================================

    async def train_toy(
        self,
        steps: Optional[int] = None,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        save: Optional[str] = None,
        T: int = 32,
        k: Optional[int] = None,
        K: Optional[int] = None,
        teacher_steps: Optional[int] = None,
        lr_sea: Optional[float] = None,
        lr_backbone: Optional[float] = None,
        optimizer: Optional[str] = None,
        batch_size: Optional[int] = None,
        task_only: bool = False,
    ) -> dict:
        """
        Pretrain the copy-task teacher, distill a SEA student and write the log.

        Args:
            steps: distillation steps (config trainSteps)
            out: CSV path for the training log
            save: weights file holding teacher and student
            task_only: train the undistilled baseline instead
        """
        cfg = self.cfg
        steps = cfg.train_steps if steps is None else steps
        seed = cfg.seed if seed is None else seed
        sea_logger.operation("train-toy", "started", f"steps={steps}, seed={seed}")
        try:
            toy = self.toy_config(T)
            sea_cfg = cfg.sea_config(T=toy.T, H=toy.H, d=toy.d, causal=True, k=k, K=K)
            teacher, teacher_losses = pretrain_teacher(
                toy, cfg.teacher_steps if teacher_steps is None else teacher_steps, seed=seed)
            student, log = train_toy(
                teacher, sea_cfg, steps,
                (cfg.lr_sea if lr_sea is None else lr_sea, cfg.lr_backbone if lr_backbone is None else lr_backbone),
                seed=seed, batch_size=cfg.batch_size if batch_size is None else batch_size,
                optimizer=optimizer or cfg.optimizer, task_only=task_only)
        except ConfigValidationError as e:
            sea_logger.operation("train-toy", "failed", str(e))
            return self._error(str(e), exit_code=2)
        except SeaError as e:
            sea_logger.operation("train-toy", "failed", str(e))
            return self._error(str(e))

        written = {}
        if out:
            written["log"] = str(await write_text(out, log.to_csv()))
        if save:
            extra = {"seed": seed, "k_train": sea_cfg.k, "teacher_task_loss": teacher_losses[-1] if teacher_losses else None}
            written["weights"] = str(save_toy_run(save, teacher, student, extra))

        sea_logger.operation("train-toy", "completed",
                             f"total {log.initial.total:.5f} -> {log.final.total:.5f}")
        return self._success(
            steps=steps,
            initial=log.initial.as_dict(),
            final=log.final.as_dict(),
            val_task=log.val_task[-1],
            header=log.header,
            **written,
        )

    # =========================================================================
    # Dynamic k
    # =========================================================================

    async def dynamic_k(
        self,
        weights: str,
        k_list: Sequence[int],
        seed: Optional[int] = None,
        batch_size: int = 8,
        out: Optional[str] = None,
    ) -> dict:
        """Evaluate one trained student at every k in `k_list` without retraining."""
        seed = self.cfg.seed if seed is None else seed
        sea_logger.operation("dynamic-k", "started", f"{weights}, k={list(k_list)}")
        p = Path(weights)
        if not p.exists():
            return self._error(f"Weights file does not exist: {weights}")
        try:
            teacher, student, metadata = load_toy_run(p)
            batch = copy_task_batch(np.random.default_rng([seed, 17]), batch_size, student.sea_cfg.T,
                                    teacher.cfg.vocab)
            rows = dynamic_k_sweep(student, k_list, batch)
        except ConfigValidationError as e:
            sea_logger.operation("dynamic-k", "failed", str(e))
            return self._error(str(e), exit_code=2)
        except SeaError as e:
            sea_logger.operation("dynamic-k", "failed", str(e))
            return self._error(str(e))

        csv = "k,task_loss\n" + "".join(f"{k},{loss!r}\n" for k, loss in rows)
        written = {"out": str(await write_text(out, csv))} if out else {}
        sea_logger.operation("dynamic-k", "completed", f"{len(rows)} rows")
        return self._success(rows=[{"k": k, "task_loss": loss} for k, loss in rows], csv=csv,
                             k_train=metadata.get("k_train"), **written)
