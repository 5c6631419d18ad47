"""Exception hierarchy shared across the package."""

__all__ = [
    "TvregError",
    "DomainError",
    "KernelError",
    "FitError",
    "CovarianceError",
    "StabilityError",
    "CalibrationError",
    "DataError",
    "ReplicationError",
]


class TvregError(Exception):
    """Base class for all package errors."""


class DomainError(TvregError, ValueError):
    """Argument outside the domain where an operation is defined."""


class KernelError(TvregError, ValueError):
    """Kernel fails validation (symmetry, unit mass, support)."""


class FitError(TvregError, ArithmeticError):
    """Local linear fitting failed (degenerate weights, all points singular)."""


class CovarianceError(TvregError, ArithmeticError):
    """A covariance or weight matrix is not usable (not PD, singular)."""


class StabilityError(TvregError, ValueError):
    """Autoregressive coefficients violate the stability condition."""


class CalibrationError(TvregError, RuntimeError):
    """Too many Monte Carlo replicates failed."""


class DataError(TvregError, ValueError):
    """Input data is malformed (non-numeric, non-finite, wrong shape)."""


class ReplicationError(TvregError, RuntimeError):
    """A Monte Carlo replicate failed; the message names its index."""
