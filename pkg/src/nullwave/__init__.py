"""Pseudo-spectral simulation of quasilinear wave equations with null-form nonlinearities."""

from .errors import (
    ConfigError,
    DiagnosticError,
    HyperbolicityError,
    NaNError,
    NullConditionError,
    NullwaveError,
    SupportMarginError,
)
from .fields import FieldState, Grid3
from .tensors import NullFormTensor, preset, validate_null_condition

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DiagnosticError",
    "FieldState",
    "Grid3",
    "HyperbolicityError",
    "NaNError",
    "NullConditionError",
    "NullFormTensor",
    "NullwaveError",
    "SupportMarginError",
    "preset",
    "validate_null_condition",
]
