"""
Exception hierarchy shared by every pipeline stage.

Each root carries the CLI exit code it maps to:
  UsageError     -> 1
  DataError      -> 2
  NumericalError -> 3
"""
from __future__ import annotations

from typing import Any, Sequence


class RangecastError(Exception):
    exit_code = 1

    def to_dict(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


# -----------------------------
# Usage
# -----------------------------
class UsageError(RangecastError, ValueError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class SpecError(UsageError):
    pass


class ShapeError(UsageError):
    pass


class MissingArtifact(UsageError):
    pass


# -----------------------------
# Data
# -----------------------------
class DataError(RangecastError, ValueError):
    exit_code = 2


class EmptyData(DataError):
    pass


class DuplicateTimestamp(DataError):
    def __init__(self, timestamp: str):
        super().__init__(f"Duplicate timestamp: {timestamp}")
        self.timestamp = timestamp


class InvalidPrice(DataError):
    pass


class EmptyPanel(DataError):
    pass


class NoCommonDays(DataError):
    pass


class EmptySampleSet(DataError):
    pass


class SplitError(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class ManifestMismatch(DataError):
    pass


# -----------------------------
# Numerical
# -----------------------------
class NumericalError(RangecastError, RuntimeError):
    exit_code = 3


class DegenerateScale(NumericalError):
    pass


class DegenerateSeries(NumericalError):
    pass


class SingularFit(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


class TuningFailed(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, message: str = ""):
        super().__init__(message or f"Loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class ConvergenceFailure(NumericalError):
    def __init__(self, message: str, last_iterate: Sequence[float] = (), trace: Sequence[float] = ()):
        super().__init__(message)
        self.last_iterate = tuple(float(v) for v in last_iterate)
        self.trace = tuple(float(v) for v in trace)

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["last_iterate"] = list(self.last_iterate)
        out["trace_tail"] = list(self.trace[-5:])
        return out
