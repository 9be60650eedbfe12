"""Exception types shared across the package."""


class CopnetError(Exception):
    """Base class for all library errors."""


class DataError(CopnetError):
    """Malformed or inconsistent input data."""


class FitError(CopnetError):
    """Marginal model fitting failed (degenerate data or non-convergence)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ChainError(CopnetError):
    """Invalid MCMC state or configuration."""
