class HeckmiError(Exception):
    """Base class for package errors."""


class NonEstimable(HeckmiError):
    """A cluster-level model cannot be fitted (too little data, separation,
    optimizer failure or a correlation estimate on the boundary)."""


class PoolingError(HeckmiError):
    """Too few contributions to pool, or pooling inputs are inconsistent."""


class ImputationError(HeckmiError):
    """An imputation run cannot proceed; ``report`` carries diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class SpecError(HeckmiError, ValueError):
    """An imputation spec or run configuration is invalid."""
