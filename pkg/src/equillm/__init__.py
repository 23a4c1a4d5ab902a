"""Equivariant geometric graph model conditioned through a frozen sequence model."""

from __future__ import annotations

from .config import RunConfig
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EquiLLMError,
    NumericalError,
)
from .model import EquiLLM

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EquiLLM",
    "EquiLLMError",
    "NumericalError",
    "RunConfig",
]
__version__ = "0.1.0"
