"""
Tensor Core

Dense tensor substrate with reverse-mode differentiation for the train-time
path, plus the weight container.
"""
from . import ops
from .errors import (
    ConfigValidationError,
    ContractError,
    DimensionError,
    NumericalDegeneracyError,
    SeaError,
    StageError,
    StructuralError,
)
from .serialization import decode_weights, encode_weights, load_weights, save_weights
from .tensor import DenseTensor, Tape, backward, current_tape, is_grad_enabled, no_grad, tensor

__all__ = [
    "ops",
    "DenseTensor",
    "Tape",
    "tensor",
    "backward",
    "current_tape",
    "is_grad_enabled",
    "no_grad",
    "save_weights",
    "load_weights",
    "encode_weights",
    "decode_weights",
    "SeaError",
    "DimensionError",
    "ContractError",
    "NumericalDegeneracyError",
    "StructuralError",
    "ConfigValidationError",
    "StageError",
]
