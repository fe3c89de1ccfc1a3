"""
Error types for the flash anti-spoofing pipeline.
Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations


class AtrFasError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


# ============================================
# Configuration & data
# ============================================

class ConfigError(AtrFasError, ValueError):
    """Invalid, unknown or inconsistent configuration."""

    exit_code = 2


class DataError(AtrFasError, OSError):
    """Missing, unwritable or corrupt dataset / checkpoint files."""

    exit_code = 3


class NumericError(AtrFasError, ArithmeticError):
    """NaN or Inf detected in a computation."""

    exit_code = 4


# ============================================
# Contract violations (raised by library code)
# ============================================

class DimensionError(AtrFasError, ValueError):
    """Shapes of operands do not agree."""


class ParameterError(AtrFasError, ValueError):
    """An argument is outside its valid range."""


class ContractError(AtrFasError, RuntimeError):
    """An operation was called in a state it does not support."""


class DomainError(AtrFasError, ValueError):
    """A value lies outside the mathematical domain of a function."""


class AlignmentError(AtrFasError, ValueError):
    """Landmarks cannot define a similarity transform."""


class LabelError(AtrFasError, ValueError):
    """A label or target vector violates its contract."""


class MetricError(AtrFasError, ValueError):
    """Score set cannot support the requested metric."""


class StratificationError(AtrFasError, ValueError):
    """Folds cannot be built with every class present."""
