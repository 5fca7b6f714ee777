"""Exception types raised across the package."""

from __future__ import annotations


class ForecastBenchError(Exception):
    """Base class for all package errors."""


# ingest
class MissingColumn(ForecastBenchError, KeyError):
    pass


class UnparseableDate(ForecastBenchError, ValueError):
    pass


class EmptyAfterCleaning(ForecastBenchError, ValueError):
    pass


class DuplicateDate(ForecastBenchError, ValueError):
    pass


class InvalidSeries(ForecastBenchError, ValueError):
    pass


class BoundaryOutOfRange(ForecastBenchError, ValueError):
    pass


class EmptyPartition(ForecastBenchError, ValueError):
    pass


class SeriesTooShort(ForecastBenchError, ValueError):
    pass


class SingularRegression(ForecastBenchError, ValueError):
    pass


# metrics
class LengthMismatch(ForecastBenchError, ValueError):
    pass


class ZeroDenominator(ForecastBenchError, ZeroDivisionError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"zero denominator at index {index}")


class ConstantOutput(ForecastBenchError, ZeroDivisionError):
    pass


# classical
class DimensionMismatch(ForecastBenchError, ValueError):
    pass


class OptimizerDiverged(ForecastBenchError, RuntimeError):
    pass


class NonInvertibleFit(UserWarning):
    """Warning: fitted AR or MA polynomial has a root on or inside the unit circle."""


class MissingExog(ForecastBenchError, ValueError):
    pass


class AllFitsFailed(ForecastBenchError, RuntimeError):
    pass


# neural / probabilistic
class ShapeMismatch(ForecastBenchError, ValueError):
    pass


class NonFiniteLoss(ForecastBenchError, FloatingPointError):
    pass


class ContextTooShort(ForecastBenchError, ValueError):
    pass


# bench
class ConfigError(ForecastBenchError, ValueError):
    """Invalid experiment config; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
