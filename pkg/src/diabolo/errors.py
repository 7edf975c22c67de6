"""Exception hierarchy. The CLI maps these onto exit codes."""


class DiaboloError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(DiaboloError, ValueError):
    """Invalid, incomplete or unknown configuration."""

    exit_code = 1


class NumericalError(DiaboloError, ArithmeticError):
    """Eigensolver failure, singular linear solve, rank-deficient fit."""

    exit_code = 2


class DomainError(DiaboloError, ValueError):
    """Parameters outside the domain where a closed form is defined."""

    exit_code = 2


class DataError(DiaboloError):
    """Problems with measured or synthetic data (traces, dwell lists)."""

    exit_code = 3


class DetectionError(DataError):
    """No two-level structure could be found in a trace."""


class InsufficientDataError(DataError):
    """Too few events for a reported fit."""
