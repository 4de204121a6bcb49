"""
Distill
Layerwise distillation of a quadratic teacher into SEA attention on a toy
copy task, and the loss terms it is built from.
"""
from .losses import (
    LayerLosses,
    LossBreakdown,
    LossWeights,
    expand_compressed,
    kl_divergence,
    loss_approx,
    loss_context,
    loss_kd_layer,
    loss_kd_task,
    loss_prob,
    task_loss,
    total_loss,
)
from .optim import SGD, Adam, ParamGroup, make_optimizer
from .toy import CopyBatch, SeaStudent, ToyConfig, ToyTransformer, Trace, copy_task_batch
from .train import (
    TrainingLog,
    dynamic_k_sweep,
    evaluate,
    evaluate_task,
    load_toy_run,
    pretrain_teacher,
    save_toy_run,
    train_toy,
)

__all__ = [
    "LossWeights",
    "LayerLosses",
    "LossBreakdown",
    "kl_divergence",
    "expand_compressed",
    "loss_approx",
    "loss_prob",
    "loss_context",
    "loss_kd_layer",
    "loss_kd_task",
    "task_loss",
    "total_loss",
    "SGD",
    "Adam",
    "ParamGroup",
    "make_optimizer",
    "ToyConfig",
    "ToyTransformer",
    "SeaStudent",
    "Trace",
    "CopyBatch",
    "copy_task_batch",
    "TrainingLog",
    "pretrain_teacher",
    "train_toy",
    "evaluate",
    "evaluate_task",
    "dynamic_k_sweep",
    "save_toy_run",
    "load_toy_run",
]
