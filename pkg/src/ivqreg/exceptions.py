"""Exception taxonomy shared across the package."""

from __future__ import annotations


class IvqrError(Exception):
    """Base class for package errors."""


class ConfigurationError(IvqrError):
    """Invalid configuration: missing columns, bad grids, malformed options."""


class DataParseError(IvqrError):
    """Malformed input data; carries the offending file line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class DomainError(IvqrError, ValueError):
    """Argument outside its mathematical domain (tau, bandwidth, level)."""


class SolverError(IvqrError):
    """Iterative solver failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SingularityError(IvqrError):
    """Near-singular matrix where an inverse is required."""

    def __init__(self, message: str, condition_number: float | None = None):
        if condition_number is not None:
            message = f"{message} (condition number {condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class WeakIdentificationError(SingularityError):
    """Identification too weak for Wald-type variance; use robust regions."""
