"""
Desk-scale distillation on the copy task.

Teacher pretraining, the distillation loop, evaluation, dynamic-k sweeps
and the weights file that ties a teacher to its student.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from src.modules.distill.losses import (
    LayerLosses,
    LossBreakdown,
    LossWeights,
    loss_approx,
    loss_context,
    loss_kd_layer,
    loss_kd_task,
    loss_prob,
    task_loss,
    total_loss,
)
from src.modules.distill.optim import ParamGroup, make_optimizer
from src.modules.distill.toy import CopyBatch, SeaStudent, ToyConfig, ToyTransformer, Trace, copy_task_batch
from src.modules.sea import SeaConfig
from src.modules.tensor_core import (
    ContractError,
    NumericalDegeneracyError,
    Tape,
    load_weights,
    no_grad,
    ops,
    save_weights,
)
from src.utils.logger import get_logger

logger = get_logger("distill")

DEFAULT_LR_PAIR = (1e-4, 1e-5)   # (SEA parameters, backbone)


@dataclass
class TeacherArrays:
    """Constant teacher activations for one batch, numpy arrays with a leading batch axis."""
    attn: list[np.ndarray]
    context: list[np.ndarray]
    outputs: list[np.ndarray]
    logits: np.ndarray


def teacher_arrays(teacher: ToyTransformer, tokens: np.ndarray) -> TeacherArrays:
    with no_grad():
        trace = teacher.forward(tokens)
    return TeacherArrays([a.data for a in trace.attn], [c.data for c in trace.context],
                         [o.data for o in trace.outputs], trace.logits.data)


@dataclass
class TrainingLog:
    header: dict[str, Any]
    rows: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    val_task: list[float] = field(default_factory=list)

    def record(self, step: int, breakdown: LossBreakdown, raw_task: float) -> None:
        self.rows.append((step, breakdown))
        self.val_task.append(raw_task)

    @property
    def initial(self) -> LossBreakdown:
        return self.rows[0][1]

    @property
    def final(self) -> LossBreakdown:
        return self.rows[-1][1]

    def to_csv(self) -> str:
        meta = [f"# {key}={value}" for key, value in self.header.items()]
        lines = meta + [LossBreakdown.CSV_HEADER] + [b.csv_row(step) for step, b in self.rows]
        return "\n".join(lines) + "\n"


# =============================================================================
# Losses over a batch
# =============================================================================

def sample_losses(student: SeaStudent, trace: Trace, teacher: TeacherArrays, b: int,
                  batch: CopyBatch, weights: LossWeights):
    causal = student.sea_cfg.causal
    layers = []
    for i in range(len(trace.outputs)):
        layers.append(LayerLosses(
            approx=loss_approx(trace.attn[i], teacher.attn[i][b], causal, weights),
            prob=loss_prob(trace.q[i], trace.k[i], teacher.attn[i][b], causal, weights),
            context=loss_context(trace.context[i], teacher.context[i][b]),
            kd=loss_kd_layer(trace.outputs[i], teacher.outputs[i][b]),
        ))
    task = task_loss(trace.logits, batch.targets[b], batch.loss_mask[b])
    total, breakdown = total_loss(layers, loss_kd_task(trace.logits, teacher.logits[b]), task, weights)
    return total, breakdown, task


def batch_objective(student: SeaStudent, teacher: TeacherArrays, batch: CopyBatch,
                    weights: LossWeights, task_only: bool = False, k: Optional[int] = None):
    """Mean objective over the batch, mean breakdown and mean raw task loss."""
    objective = None
    breakdowns, tasks = [], []
    n = len(batch.tokens)
    for b in range(n):
        trace = student.forward(batch.tokens[b], k=k)
        total, breakdown, task = sample_losses(student, trace, teacher, b, batch, weights)
        term = task if task_only else total
        objective = term if objective is None else ops.add(objective, term)
        breakdowns.append(breakdown)
        tasks.append(task.item())
    return ops.div(objective, float(n)), LossBreakdown.mean(breakdowns), float(np.mean(tasks))


def evaluate(student: SeaStudent, teacher: TeacherArrays, batch: CopyBatch,
             weights: LossWeights = LossWeights()) -> tuple[LossBreakdown, float]:
    with no_grad():
        _, breakdown, task = batch_objective(student, teacher, batch, weights)
    return breakdown, task


def evaluate_task(model, batch: CopyBatch, k: Optional[int] = None, sparse: bool = True) -> float:
    """Mean next-token cross-entropy; students run the sparse engine unless told otherwise."""
    with no_grad():
        if isinstance(model, SeaStudent):
            losses = [task_loss(model.forward(batch.tokens[b], k=k, sparse=sparse).logits,
                                batch.targets[b], batch.loss_mask[b]).item()
                      for b in range(len(batch.tokens))]
            return float(np.mean(losses))
        return task_loss(model.forward(batch.tokens).logits, batch.targets, batch.loss_mask).item()


# =============================================================================
# Teacher pretraining
# =============================================================================

def pretrain_teacher(cfg: ToyConfig, steps: int, seed: int = 0, lr: float = 3e-3,
                     batch_size: int = 16) -> tuple[ToyTransformer, list[float]]:
    """Train the quadratic teacher on the copy task with Adam; returns the per-step task losses."""
    teacher = ToyTransformer.init(cfg, seed)
    optimizer = make_optimizer("adam", [ParamGroup(list(teacher.params.values()), lr)])
    rng = np.random.default_rng([seed, 3])
    losses = []
    for step in range(1, steps + 1):
        batch = copy_task_batch(rng, batch_size, cfg.T, cfg.vocab)
        with Tape() as tape:
            loss = task_loss(teacher.forward(batch.tokens).logits, batch.targets, batch.loss_mask)
            tape.backward(loss)
        optimizer.step()
        optimizer.zero_grad()
        losses.append(loss.item())
        if step % 100 == 0 or step == steps:
            logger.info(f"teacher step {step}/{steps}: task loss {np.mean(losses[-20:]):.4f}")
    return teacher, losses


# =============================================================================
# Distillation
# =============================================================================

def train_toy(teacher: ToyTransformer, sea_cfg: SeaConfig, steps: int,
              lr_pairs: tuple[float, float] = DEFAULT_LR_PAIR, *, seed: int = 0,
              batch_size: int = 4, val_size: int = 4, optimizer: str = "sgd",
              task_only: bool = False, weights: LossWeights = LossWeights(),
              student: Optional[SeaStudent] = None) -> tuple[SeaStudent, TrainingLog]:
    """
    Distill `teacher` into a SEA student for `steps` updates.

    Row 0 of the log is the initial evaluation; row s is the fixed validation
    batch after s updates. With `task_only` the student optimizes the task
    loss alone (the undistilled baseline).
    """
    if steps < 0:
        raise ContractError(f"steps must be >= 0, got {steps}")
    toy = teacher.cfg
    lr_sea, lr_backbone = lr_pairs
    student = student or SeaStudent.from_teacher(teacher, sea_cfg, seed)
    opt = make_optimizer(optimizer, [ParamGroup(student.sea_parameters(), lr_sea),
                                     ParamGroup(student.backbone_parameters(), lr_backbone)])
    opt.zero_grad()

    log = TrainingLog(header={"lr_sea": lr_sea, "lr_backbone": lr_backbone, "optimizer": optimizer,
                              "steps": steps, "seed": seed, "batch_size": batch_size,
                              "task_only": task_only, "k": sea_cfg.k, "K": sea_cfg.K, "T": sea_cfg.T})
    rng = np.random.default_rng([seed, 11])
    val = copy_task_batch(np.random.default_rng([seed, 13]), val_size, toy.T, toy.vocab)
    val_teacher = teacher_arrays(teacher, val.tokens)
    log.record(0, *evaluate(student, val_teacher, val, weights))

    for step in range(1, steps + 1):
        batch = copy_task_batch(rng, batch_size, toy.T, toy.vocab)
        batch_teacher = teacher_arrays(teacher, batch.tokens)
        try:
            with Tape() as tape:
                objective, _, _ = batch_objective(student, batch_teacher, batch, weights, task_only)
                if not math.isfinite(objective.item()):
                    raise ContractError(f"loss is NaN at step {step}")
                tape.backward(objective)
        except (NumericalDegeneracyError, ContractError) as e:
            logger.error(f"training aborted at step {step}: {e}")
            raise ContractError(f"training aborted at step {step}: {e}") from e
        opt.step()
        opt.zero_grad()
        log.record(step, *evaluate(student, val_teacher, val, weights))
        if step % 50 == 0 or step == steps:
            logger.info(f"step {step}/{steps}: total {log.final.total:.5f}, val task {log.val_task[-1]:.4f}")
    return student, log


def dynamic_k_sweep(student: SeaStudent, k_list: Sequence[int], batch: CopyBatch) -> list[tuple[int, float]]:
    """Task loss of the same trained weights at every k, sparse engine, no retraining."""
    for k in k_list:
        student.sea_cfg.validate_k(k)
    return [(int(k), evaluate_task(student, batch, k=k)) for k in k_list]


# =============================================================================
# Weights file
# =============================================================================

def save_toy_run(path: str | Path, teacher: ToyTransformer, student: SeaStudent,
                 extra: Optional[dict] = None) -> Path:
    tensors = {**teacher.named_parameters("teacher."), **student.named_parameters("student.")}
    metadata = {"toy": teacher.cfg.as_dict(), "sea": student.sea_cfg.as_dict(), **(extra or {})}
    return save_weights(path, tensors, metadata)


def load_toy_run(path: str | Path) -> tuple[ToyTransformer, SeaStudent, dict]:
    tensors, metadata = load_weights(path)
    if "toy" not in metadata or "sea" not in metadata:
        raise ContractError(f"{path} carries no toy/SEA configuration metadata")
    toy_cfg = ToyConfig(**metadata["toy"])
    sea_cfg = SeaConfig.create(**metadata["sea"])
    teacher = ToyTransformer.from_named(toy_cfg, tensors, "teacher.")
    student = SeaStudent.from_named(toy_cfg, sea_cfg, tensors, "student.")
    return teacher, student, metadata
