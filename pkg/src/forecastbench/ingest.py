"""Loading, splitting, windowing and stationarity diagnostics for index series."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    BoundaryOutOfRange,
    DuplicateDate,
    EmptyAfterCleaning,
    EmptyPartition,
    InvalidSeries,
    MissingColumn,
    SeriesTooShort,
    SingularRegression,
    UnparseableDate,
)

logger = logging.getLogger(__name__)

# Constant-only Dickey-Fuller asymptotic critical values.
ADF_CRITICAL_VALUES = {0.01: -3.43, 0.05: -2.86, 0.10: -2.57}
DEFAULT_BOUNDARY = date(2019, 12, 31)

_DATE_FORMATS = ("%Y-%m-%d", "%d-%m-%Y")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Series:
    """Univariate observations on strictly increasing calendar dates."""

    timestamps: np.ndarray
    values: np.ndarray
    name: str = "value"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[D]")
        vals = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or vals.ndim != 1 or len(ts) != len(vals):
            raise InvalidSeries("timestamps and values must be 1-d and of equal length")
        if len(vals) == 0:
            raise InvalidSeries("series must contain at least one observation")
        if not np.all(np.isfinite(vals)):
            raise InvalidSeries("values contain NaN or infinite entries")
        steps = np.diff(ts).astype(np.int64)
        if np.any(steps == 0):
            raise DuplicateDate(f"duplicate date {ts[1:][steps == 0][0]}")
        if np.any(steps < 0):
            raise InvalidSeries("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "values", _readonly(vals))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, item: slice) -> "Series":
        if not isinstance(item, slice):
            raise TypeError("Series supports slice indexing only")
        return Series(self.timestamps[item], self.values[item], self.name)

    def with_values(self, values, name: str | None = None) -> "Series":
        return Series(self.timestamps, values, name or self.name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"date": self.timestamps, self.name: self.values})


@dataclass(frozen=True)
class LoadSummary:
    path: str
    rows_read: int
    rows_dropped: int
    rows_kept: int
    first_date: str
    last_date: str


@dataclass(frozen=True)
class SplitSpec:
    boundary: date = DEFAULT_BOUNDARY
    train_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")


@dataclass(frozen=True)
class WindowSet:
    """Supervised (context, target) pairs cut from one series.

    ``contexts`` has shape (n_windows, context_len) and ``targets`` shape
    (n_windows, horizon). ``source`` keeps the originating series so models can
    derive calendar features for each window.
    """

    context_len: int
    horizon: int
    contexts: np.ndarray
    targets: np.ndarray
    origin_indices: np.ndarray
    source: Series | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.origin_indices)

    @property
    def windows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.contexts, self.targets))

    @property
    def full(self) -> np.ndarray:
        """Context and target concatenated, shape (n_windows, context_len + horizon)."""
        return np.concatenate([self.contexts, self.targets], axis=1)

    def window_timestamps(self) -> np.ndarray:
        if self.source is None:
            raise ValueError("window set has no source series")
        width = self.context_len + self.horizon
        idx = self.origin_indices[:, None] + np.arange(width)[None, :]
        return self.source.timestamps[idx]


@dataclass(frozen=True)
class StationarityReport:
    adf_statistic: float
    lag_order: int
    critical_values: dict
    is_stationary: bool
    rolling_mean: Series | None
    rolling_std: Series | None
    nobs: int = 0

    @property
    def verdict(self) -> str:
        return "stationary" if self.is_stationary else "non-stationary"


@dataclass(frozen=True)
class DiffState:
    """Leading values removed by each differencing stage, in application order."""

    d: int
    D: int
    m: int
    heads: tuple


def _parse_dates(raw: pd.Series) -> np.ndarray:
    text = raw.astype(str).str.strip()
    for fmt in _DATE_FORMATS:
        parsed = pd.to_datetime(text, format=fmt, errors="coerce")
        if not parsed.isna().any():
            return parsed.values.astype("datetime64[D]")
    parsed = pd.to_datetime(text, format=_DATE_FORMATS[0], errors="coerce")
    bad = text[parsed.isna()].iloc[0]
    raise UnparseableDate(f"cannot parse date {bad!r} as ISO-8601 or DD-MM-YYYY")


def _to_float(text: str) -> float:
    try:
        return float(text.replace(",", ""))
    except ValueError:
        return float("nan")


def load_csv(
    path,
    value_column: str = "Close",
    date_column: str = "Date",
    return_summary: bool = False,
):
    """Read a dated value column from a CSV file.

    Rows with a blank value cell are dropped and counted; the load summary is
    logged as a single JSON line and optionally returned.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for col in (date_column, value_column):
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} not found in {path} (have {list(frame.columns)})")
    rows_read = len(frame)
    raw_vals = frame[value_column].str.strip()
    keep = (raw_vals != "") & (raw_vals.str.lower() != "nan") & (raw_vals.str.lower() != "null")
    frame = frame[keep]
    if len(frame) == 0:
        raise EmptyAfterCleaning(f"no usable rows in {path}")
    values = np.array([_to_float(v) for v in frame[value_column]])
    finite = np.isfinite(values)
    frame, values = frame[finite], values[finite]
    if len(frame) == 0:
        raise EmptyAfterCleaning(f"no usable rows in {path}")
    dates = _parse_dates(frame[date_column])
    order = np.argsort(dates, kind="stable")
    dates, vals = dates[order], values[order]
    dup = np.diff(dates).astype(np.int64) == 0
    if np.any(dup):
        raise DuplicateDate(f"duplicate date {dates[1:][dup][0]} in {path}")
    series = Series(dates, vals, value_column)
    summary = LoadSummary(
        path=str(path),
        rows_read=rows_read,
        rows_dropped=rows_read - len(series),
        rows_kept=len(series),
        first_date=str(dates[0]),
        last_date=str(dates[-1]),
    )
    logger.info("load_summary %s", json.dumps(summary.__dict__))
    if return_summary:
        return series, summary
    return series


def save_csv(series: Series, path, value_column: str | None = None, date_column: str = "Date") -> None:
    frame = pd.DataFrame(
        {date_column: np.datetime_as_string(series.timestamps, unit="D"),
         value_column or series.name: series.values}
    )
    frame.to_csv(path, index=False)


def split(series: Series, spec: SplitSpec) -> tuple[Series, Series]:
    """Train on dates up to ``spec.boundary`` (most recent fraction kept), test on the rest."""
    boundary = np.datetime64(spec.boundary, "D")
    if not series.timestamps[0] <= boundary < series.timestamps[-1]:
        raise BoundaryOutOfRange(
            f"boundary {boundary} outside [{series.timestamps[0]}, {series.timestamps[-1]})"
        )
    n_train = int(np.searchsorted(series.timestamps, boundary, side="right"))
    keep = math.ceil(spec.train_fraction * n_train)
    if keep == 0 or n_train == len(series):
        raise EmptyPartition("split leaves an empty partition")
    return series[n_train - keep:n_train], series[n_train:]


def make_windows(series: Series, context_len: int = 5, horizon: int = 5, stride: int = 1) -> WindowSet:
    if context_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("context_len, horizon and stride must be positive")
    n, width = len(series), context_len + horizon
    if n < width:
        raise SeriesTooShort(f"need at least {width} observations, have {n}")
    origins = np.arange(0, n - width + 1, stride)
    idx = origins[:, None] + np.arange(width)[None, :]
    block = series.values[idx]
    return WindowSet(
        context_len=context_len,
        horizon=horizon,
        contexts=_readonly(block[:, :context_len]),
        targets=_readonly(block[:, context_len:]),
        origin_indices=_readonly(origins),
        source=series,
    )


def rolling_stats(series: Series, window: int = 10) -> tuple[Series, Series]:
    """Rolling mean and sample standard deviation, stamped at each window's end date."""
    if window < 2:
        raise ValueError("window must be at least 2 for a sample standard deviation")
    if len(series) < window:
        raise SeriesTooShort(f"need at least {window} observations, have {len(series)}")
    view = np.lib.stride_tricks.sliding_window_view(series.values, window)
    ts = series.timestamps[window - 1:]
    return (
        Series(ts, view.mean(axis=1), f"{series.name}_rolling_mean"),
        Series(ts, view.std(axis=1, ddof=1), f"{series.name}_rolling_std"),
    )


def difference_values(values, d: int = 1, D: int = 0, m: int = 1) -> tuple[np.ndarray, DiffState]:
    """Apply ``D`` seasonal differences at lag ``m``, then ``d`` ordinary ones."""
    if d < 0 or D < 0 or m < 1:
        raise ValueError("d and D must be non-negative and m positive")
    x = np.asarray(values, dtype=np.float64)
    if len(x) <= d + D * m:
        raise SeriesTooShort(f"need more than {d + D * m} observations, have {len(x)}")
    heads = []
    for _ in range(D):
        heads.append(x[:m].copy())
        x = x[m:] - x[:-m]
    for _ in range(d):
        heads.append(x[:1].copy())
        x = np.diff(x)
    return x, DiffState(d, D, m, tuple(heads))


def integrate_values(diffed, state: DiffState) -> np.ndarray:
    """Inverse of :func:`difference_values` given the stored leading values."""
    x = np.asarray(diffed, dtype=np.float64)
    lags = [state.m] * state.D + [1] * state.d
    for lag, head in zip(reversed(lags), reversed(state.heads)):
        out = np.empty(len(x) + lag)
        out[:lag] = head
        for start in range(lag):
            out[start + lag::lag] = head[start] + np.cumsum(x[start::lag])
        x = out
    return x


def difference(series: Series, d: int = 1, D: int = 0, m: int = 1) -> Series:
    diffed, _ = difference_values(series.values, d, D, m)
    return Series(series.timestamps[len(series) - len(diffed):], diffed, series.name)


def integrate(diffed: Series, state: DiffState, timestamps=None) -> Series:
    """Rebuild the undifferenced series; ``timestamps`` must cover the full length."""
    values = integrate_values(diffed.values, state)
    if timestamps is None:
        raise ValueError("timestamps for the restored series are required")
    return Series(timestamps, values, diffed.name)


def extend_differenced(history, future_diffed, d: int = 1, D: int = 0, m: int = 1) -> np.ndarray:
    """Map future values on the differenced scale back to levels after ``history``."""
    history = np.asarray(history, dtype=np.float64)
    stages = [history]
    for _ in range(D):
        stages.append(stages[-1][m:] - stages[-1][:-m])
    for _ in range(d):
        stages.append(np.diff(stages[-1]))
    lags = [m] * D + [1] * d
    future = np.asarray(future_diffed, dtype=np.float64)
    for lag, prev in zip(reversed(lags), reversed(stages[:-1])):
        ext = np.concatenate([prev, np.empty(len(future))])
        base = len(prev)
        for i, z in enumerate(future):
            ext[base + i] = ext[base + i - lag] + z
        future = ext[base:]
    return future


def _ols(y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least squares returning coefficients, their standard errors and the SSR."""
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularRegression("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    dof = len(y) - X.shape[1]
    if dof <= 0:
        raise SingularRegression("not enough observations for the regression")
    sigma2 = ssr / dof
    if sigma2 <= 1e-14 * max(float(y @ y) / len(y), 1e-300):
        raise SingularRegression("regression residuals vanish; statistic undefined")
    rinv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * np.sum(rinv**2, axis=1))
    return beta, se, ssr


def _adf_design(y: np.ndarray, lag: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    dy = np.diff(y)
    # Rows are t = start .. len(dy)-1, each regressing dy[t] on y[t] and dy[t-1..t-lag].
    rows = np.arange(start, len(dy))
    level = y[rows]
    cols = [np.ones(len(rows)), level - level.mean()]
    for i in range(1, lag + 1):
        cols.append(dy[rows - i])
    return dy[rows], np.column_stack(cols)


def default_max_lag(n: int) -> int:
    return int(np.ceil(12.0 * (n / 100.0) ** 0.25))


def adf_test(series, max_lag: int | None = None, rolling_window: int | None = 10) -> StationarityReport:
    """Augmented Dickey-Fuller test with an intercept and AIC lag selection.

    Lag orders 0..max_lag are compared on a common estimation sample; the chosen
    order is then re-estimated on the longest sample available to it.
    """
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    n = len(values)
    if max_lag is None:
        max_lag = max(0, min(default_max_lag(n), n - 10))
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if n < max_lag + 10:
        raise SeriesTooShort(f"need at least {max_lag + 10} observations, have {n}")
    if np.ptp(values) == 0:
        raise SingularRegression("series is constant")

    best_lag, best_aic = 0, np.inf
    for lag in range(max_lag + 1):
        dy, X = _adf_design(values, lag, max_lag)
        _, _, ssr = _ols(dy, X)
        aic = len(dy) * np.log(ssr / len(dy)) + 2 * X.shape[1]
        if aic < best_aic - 1e-12:
            best_lag, best_aic = lag, aic
    dy, X = _adf_design(values, best_lag, best_lag)
    beta, se, _ = _ols(dy, X)
    stat = float(beta[1] / se[1])

    rmean = rstd = None
    if isinstance(series, Series) and rolling_window and len(series) >= rolling_window:
        rmean, rstd = rolling_stats(series, rolling_window)
    return StationarityReport(
        adf_statistic=stat,
        lag_order=best_lag,
        critical_values=dict(ADF_CRITICAL_VALUES),
        is_stationary=stat < ADF_CRITICAL_VALUES[0.05],
        rolling_mean=rmean,
        rolling_std=rstd,
        nobs=len(dy),
    )
