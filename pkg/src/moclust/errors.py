"""Exception hierarchy shared across the package."""


class MoclustError(Exception):
    """Base class for all package errors."""


class DimensionError(MoclustError, ValueError):
    """Array shapes do not agree."""


class FactorizationError(MoclustError, ArithmeticError):
    """A covariance matrix failed Cholesky factorization (not positive-definite)."""


class NumericError(MoclustError, ArithmeticError):
    """NaN or otherwise unusable value encountered."""


class InsufficientDataError(MoclustError, ValueError):
    """Too few observations for the requested operation."""


class DegenerateDataError(MoclustError):
    """Data cannot support the requested clustering (e.g. k-means keeps emptying a cluster)."""


class DegenerateComponentError(MoclustError):
    """A mixture component became too small to estimate its covariances."""


class FitError(MoclustError):
    """Every EM start failed.

    ``diagnostics`` holds one message per start.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class SubsetFailureError(MoclustError):
    """Too many leave-one-out refits failed."""
