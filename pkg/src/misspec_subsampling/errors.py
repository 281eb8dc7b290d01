"""Exception types raised across the package."""

from __future__ import annotations


class SubsamplingError(Exception):
    """Base class for package errors."""


class DimensionError(SubsamplingError, ValueError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class SingularSystemError(SubsamplingError, ArithmeticError):
    """A linear system or information matrix could not be inverted."""

    def __init__(self, message, rank=None, condition=None):
        super().__init__(message)
        self.rank = rank
        self.condition = condition


class OverflowRowError(SubsamplingError, OverflowError):
    def __init__(self, row: int, eta: float, cap: float):
        super().__init__(
            f"linear predictor {eta:.6g} at row {row} exceeds the cap {cap:g}")
        self.row = row
        self.eta = eta
        self.cap = cap


class DegenerateFitError(SubsamplingError, ValueError):
    """Residual variance is numerically zero."""


class ConvergenceError(SubsamplingError, RuntimeError):
    pass


class StudyError(SubsamplingError, RuntimeError):
    """Too many replicate failures in a simulation study."""
