"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SaqeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SaqeError):
    """Invalid configuration: unknown method tag, missing census, bad alpha list."""


class DataValidationError(SaqeError):
    """Input data violates a structural invariant (with row/area diagnostics)."""


class SingularDesignError(DataValidationError):
    """Design matrix is rank deficient for the requested fit."""


class NonConvergenceError(SaqeError):
    """An iterative fit failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


class DegenerateDistributionError(SaqeError):
    """A fitted distribution has collapsed (zero scale) and cannot be evaluated."""
