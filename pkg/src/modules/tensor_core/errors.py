"""
Error family shared by every SEA module.

All errors derive from ValueError so callers that only know about bad input
still catch them; module actions turn them into error dicts.
"""


class SeaError(ValueError):
    """Base class for engine errors."""


class DimensionError(SeaError):
    """Operand shapes do not agree."""


class ContractError(SeaError):
    """A pre/post condition of an operation was violated."""


class NumericalDegeneracyError(SeaError):
    """A computation left the finite range or hit a vanishing normaliser."""


class StructuralError(SeaError):
    """A sparse matrix pattern or extent is malformed or incompatible."""


class ConfigValidationError(SeaError):
    """Structural hyperparameters are inconsistent."""


class StageError(SeaError):
    """Raised by the attention pipeline; names the stage that failed."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
