"""Forecast accuracy metrics: MSE, RMSE, MAE, MAPE, POCID and Theil's U.

All functions take ``(target, output)``: realized observations first, forecasts
second. MAPE is reported in percent. POCID counts a tie (no change in either
vector) as a wrong direction call. Theil's U divides the squared forecast error
by the squared step-to-step change of the *forecast* path, both summed from the
second observation onward.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConstantOutput, LengthMismatch, SeriesTooShort, ZeroDenominator

__all__ = [
    "AlignedPair",
    "MapeDenominator",
    "MetricReport",
    "METRIC_NAMES",
    "mse",
    "rmse",
    "mae",
    "mape",
    "pocid",
    "theils_u",
    "evaluate_all",
]

METRIC_NAMES = ("mse", "rmse", "mae", "mape", "pocid", "theils_u")
# Direction of "better" per metric, used when ranking models in reports.
HIGHER_IS_BETTER = {"pocid"}


class MapeDenominator(str, enum.Enum):
    OUTPUT = "output"
    TARGET = "target"


@dataclass(frozen=True)
class AlignedPair:
    target: np.ndarray
    output: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64).ravel()
        o = np.asarray(self.output, dtype=np.float64).ravel()
        if t.shape != o.shape:
            raise LengthMismatch(f"target has {t.size} values, output has {o.size}")
        if t.size == 0:
            raise SeriesTooShort("metrics need at least one observation")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(o))):
            raise ValueError("target and output must be finite")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "output", o)

    def __len__(self) -> int:
        return self.target.size


def _pair(target, output) -> AlignedPair:
    if isinstance(target, AlignedPair):
        return target
    return AlignedPair(target, output)


def mse(target, output=None) -> float:
    p = _pair(target, output)
    err = p.target - p.output
    return float(np.mean(err * err))


def rmse(target, output=None) -> float:
    return math.sqrt(mse(target, output))


def mae(target, output=None) -> float:
    p = _pair(target, output)
    return float(np.mean(np.abs(p.target - p.output)))


def mape(target, output=None, denominator: MapeDenominator | str = MapeDenominator.OUTPUT) -> float:
    """Mean absolute percentage error, scaled by ``output`` (default) or ``target``."""
    p = _pair(target, output)
    denom = p.output if MapeDenominator(denominator) is MapeDenominator.OUTPUT else p.target
    zeros = np.flatnonzero(denom == 0)
    if zeros.size:
        raise ZeroDenominator(int(zeros[0]))
    return float(100.0 * np.mean(np.abs(p.target - p.output) / np.abs(denom)))


def pocid(target, output=None) -> float:
    p = _pair(target, output)
    if len(p) < 2:
        raise SeriesTooShort("POCID needs at least two observations")
    hits = np.diff(p.target) * np.diff(p.output) > 0
    return float(100.0 * np.count_nonzero(hits) / hits.size)


def theils_u(target, output=None) -> float:
    p = _pair(target, output)
    if len(p) < 2:
        raise SeriesTooShort("Theil's U needs at least two observations")
    err = p.target[1:] - p.output[1:]
    step = np.diff(p.output)
    denom = float(step @ step)
    if denom == 0.0:
        raise ConstantOutput("forecast path is constant; Theil's U is undefined")
    return float(err @ err) / denom


@dataclass(frozen=True)
class MetricReport:
    mse: float
    rmse: float
    mae: float
    mape: float
    pocid: float
    theils_u: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_all(
    target,
    output=None,
    mape_denominator: MapeDenominator | str = MapeDenominator.OUTPUT,
    strict: bool = True,
) -> MetricReport:
    """Compute all six metrics.

    With ``strict`` (the default) the first per-metric error propagates. With
    ``strict=False`` a metric whose precondition fails is reported as NaN, e.g.
    Theil's U of a flat multi-step forecast.
    """
    p = _pair(target, output)
    m = mse(p)
    values = {"mse": m, "rmse": math.sqrt(m), "mae": mae(p)}
    for name, fn in (("mape", lambda: mape(p, denominator=mape_denominator)),
                     ("pocid", lambda: pocid(p)), ("theils_u", lambda: theils_u(p))):
        try:
            values[name] = fn()
        except (ZeroDenominator, ConstantOutput, SeriesTooShort):
            if strict:
                raise
            values[name] = float("nan")
    return MetricReport(**values)
