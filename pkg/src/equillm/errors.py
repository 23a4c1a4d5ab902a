"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto exit codes:
configuration problems exit 2, data problems exit 3, numerical failures exit 4.
"""

from __future__ import annotations


class EquiLLMError(Exception):
    """Base class for all package errors."""


class ConfigError(EquiLLMError, ValueError):
    """Invalid configuration or hyperparameter."""


class DimensionError(EquiLLMError, ValueError):
    """Tensor shapes do not conform."""


class ContractError(EquiLLMError, ValueError):
    """A precondition of an operation was violated."""


class DataError(EquiLLMError):
    """Problems with datasets, files or checkpoints."""


class ParseError(DataError):
    """Malformed dataset or template file."""


class SamplingError(DataError):
    """Window sampling impossible for the given trajectory."""


class GenerationError(DataError):
    """Synthetic data generation failed (e.g. divergent integration)."""


class CheckpointError(DataError):
    """Checkpoint missing, malformed, or incompatible with a config."""


class StatisticsError(DataError):
    """Distance statistics requested for a graph without edges."""


class VocabularyError(ContractError):
    """Token id outside the embedding table."""


class CapacityError(ContractError):
    """Sequence longer than the positional table allows."""


class NumericalError(EquiLLMError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class TrainingError(NumericalError):
    """Optimizer invoked in an inconsistent state."""
