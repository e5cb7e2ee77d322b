"""
Exception hierarchy shared by every module.

Design choices:
- One root (BandAssignError) so the CLI can map any domain failure to exit code 2
- Each class also derives from the matching builtin so callers can catch ValueError/RuntimeError
"""

from typing import Optional, Sequence


class BandAssignError(Exception):
    """Root of all errors raised on purpose by this package."""


class DomainError(BandAssignError, ValueError):
    """An input lies outside the domain of an operation."""


class NumericalError(BandAssignError, ArithmeticError):
    """A factorization failed even after diagonal jitter."""

    def __init__(self, message: str, condition: float = float("nan"),
                 min_eigenvalue: float = float("nan")):
        super().__init__(message)
        self.condition = condition
        self.min_eigenvalue = min_eigenvalue


class SchemaError(BandAssignError, ValueError):
    """Missing field, bad shape, malformed file or unknown config key."""

    def __init__(self, message: str, line_numbers: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.line_numbers = list(line_numbers or [])


class FitError(BandAssignError, RuntimeError):
    """Channel parameters could not be fitted from the given samples."""


class TrainingError(BandAssignError, RuntimeError):
    """Model training diverged or had no usable data."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch
