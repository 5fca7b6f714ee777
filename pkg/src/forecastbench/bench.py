"""Benchmark orchestration: the train-fraction ablation and its reports.

Every (model, fraction) cell trains on the most recent fraction of the
training span and forecasts the same first ``horizon`` test days, so all
MetricReports are computed against one identical test segment. Classical
models forecast the horizon in one pass; neural and probabilistic models roll
forward recursively from the tail of the training data. Recurrent models and
DeepAR are additionally scored in windowed mode, where each 5-step block is
forecast from the realized values that precede it.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import classical, neural, probabilistic
from .config import (
    ArimaSpec,
    DeepArSpec,
    DeepFactorSpec,
    ExperimentPlan,
    RecurrentSpec,
    SarimaxSpec,
)
from .errors import ForecastBenchError, MissingColumn, NonInvertibleFit
from .forecast import Forecast
from .ingest import Series, SplitSpec, _parse_dates, load_csv, make_windows, split
from .metrics import HIGHER_IS_BETTER, METRIC_NAMES, MetricReport, evaluate_all
from .probabilistic import day_of_week

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1
QUANTILE_COLUMNS = {"q10": 0.1, "q50": 0.5, "q90": 0.9}


def fnv1a64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def cell_seed(model: str, fraction: float, seed: int) -> int:
    """Per-cell seed: 64-bit FNV-1a over ``"model|fraction|seed"``."""
    return fnv1a64(f"{model}|{fraction!r}|{seed}")


@dataclass
class CellResult:
    model: str
    fraction: float
    report: MetricReport | None = None
    windowed_report: MetricReport | None = None
    seconds: float = 0.0
    detail: str = ""
    forecast: Forecast | None = None
    windowed_point: np.ndarray | None = None
    actual: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)
    horizon: int = 0

    @property
    def failed(self) -> list:
        return [r for r in self.rows if not r.ok]

    def row(self, model: str, fraction: float) -> CellResult:
        for r in self.rows:
            if r.model == model and r.fraction == fraction:
                return r
        raise KeyError((model, fraction))

    def fingerprint(self) -> str:
        """Digest of everything except wall-clock time, for rerun comparisons."""
        h = hashlib.sha256()
        for r in self.rows:
            h.update(f"{r.model}|{r.fraction!r}|{r.detail}|{r.error}".encode())
            for rep in (r.report, r.windowed_report):
                if rep is not None:
                    h.update(np.array([getattr(rep, m) for m in METRIC_NAMES]).tobytes())
            if r.forecast is not None:
                h.update(r.forecast.point.tobytes())
                if r.forecast.samples is not None:
                    h.update(r.forecast.samples.tobytes())
            for arr in (r.windowed_point, r.actual):
                if arr is not None:
                    h.update(np.asarray(arr).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

def load_dataset(plan: ExperimentPlan) -> Series:
    ds = plan.dataset
    return load_csv(ds.resolve(), value_column=ds.value_column, date_column=ds.date_column)


def weekday_dummies(timestamps) -> np.ndarray:
    """Tuesday..Friday indicators; Monday is the reference level."""
    return day_of_week(timestamps)[:, 1:5]


def load_exog(plan: ExperimentPlan, columns, timestamps) -> np.ndarray:
    """Numeric columns of the dataset CSV aligned to ``timestamps``."""
    ds = plan.dataset
    frame = pd.read_csv(ds.resolve(), dtype=str, keep_default_na=False, encoding="utf-8")
    for col in columns:
        if col not in frame.columns:
            raise MissingColumn(f"exogenous column {col!r} not found")
    dates = _parse_dates(frame[ds.date_column])
    table = pd.DataFrame({c: pd.to_numeric(frame[c], errors="coerce").to_numpy() for c in columns},
                         index=pd.DatetimeIndex(dates))
    table = table[~table.index.duplicated(keep="first")]
    aligned = table.reindex(pd.DatetimeIndex(timestamps)).to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(aligned)):
        raise MissingColumn("exogenous columns have missing values on modeled dates")
    return aligned


@dataclass
class CellTask:
    """Everything one worker needs; picklable."""

    spec: object
    fraction: float
    seed: int
    train: Series
    history: Series
    test: Series
    horizon: int
    mape_denominator: str
    exog: np.ndarray | None = None


# ---------------------------------------------------------------------------
# cell execution
# ---------------------------------------------------------------------------

def _classical_cell(task: CellTask):
    spec = task.spec
    n_train = len(task.train)
    exog = future = None
    if isinstance(spec, SarimaxSpec):
        exog, future = task.exog[:n_train], task.exog[n_train:n_train + task.horizon]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonInvertibleFit)
        fitted = classical.auto_order(task.train, p_grid=spec.p, q_grid=spec.q, seasonal=spec.seasonal,
                                      exog=exog, d=spec.d, criterion=spec.criterion)
    fc = classical.forecast(fitted, task.horizon, future_exog=future)
    o = fitted.order
    detail = f"order=({o.p},{o.d},{o.q})"
    if o.is_seasonal:
        detail += f"x({o.P},{o.D},{o.Q})_{o.m}"
    return fitted, fc, None, f"{detail} {spec.criterion}={getattr(fitted, spec.criterion):.6g}"


def _windowed_blocks(task: CellTask, block: int, predict) -> np.ndarray:
    """Forecast the horizon in consecutive blocks, each conditioned on realized history."""
    values = np.concatenate([task.history.values, task.test.values])
    dates = np.concatenate([task.history.timestamps, task.test.timestamps])
    start0 = len(task.history)
    out = np.empty(task.horizon)
    for k, s in enumerate(range(0, task.horizon, block)):
        h = min(block, task.horizon - s)
        cut = start0 + s
        out[s:s + h] = predict(values[:cut], dates[:cut], h, k)
    return out


def _recurrent_cell(task: CellTask):
    spec: RecurrentSpec = task.spec
    train_cfg = replace(spec.train, seed=task.seed)
    windows = make_windows(task.train, spec.context_len, spec.window_horizon)
    model = neural.train_point_forecaster(windows, spec.cell, train_cfg)
    fc = neural.forecast_recursive(model, task.train.values, task.horizon)

    def predict(values, dates, h, k):
        return neural.forecast_recursive(model, values, h).point

    windowed = _windowed_blocks(task, spec.window_horizon, predict)
    return model, fc, windowed, f"final_loss={model.final_loss:.6g} epochs={train_cfg.epochs}"


def _deepar_cell(task: CellTask):
    spec: DeepArSpec = task.spec
    train_cfg = replace(spec.train, seed=task.seed)
    windows = make_windows(task.train, spec.context_len, spec.window_horizon)
    model = probabilistic.deepar_train(windows, spec.config, train_cfg)
    c = spec.context_len
    fc = probabilistic.deepar_forecast(model, task.train.values[-c:], task.horizon, seed=train_cfg.seed,
                                       context_timestamps=task.train.timestamps[-c:],
                                       timestamps=task.test.timestamps[:task.horizon])

    test_dates = task.test.timestamps

    def predict(values, dates, h, k):
        s = len(values) - len(task.history)
        sub = probabilistic.deepar_forecast(model, values[-c:], h, seed=train_cfg.seed + 1 + k,
                                            context_timestamps=dates[-c:], timestamps=test_dates[s:s + h])
        return sub.point

    windowed = _windowed_blocks(task, spec.window_horizon, predict)
    return model, fc, windowed, f"final_loss={model.final_loss:.6g} epochs={train_cfg.epochs}"


def _deepfactor_cell(task: CellTask):
    spec: DeepFactorSpec = task.spec
    train_cfg = replace(spec.train, seed=task.seed)
    windows = make_windows(task.train, spec.context_len, spec.window_horizon)
    model = probabilistic.deepfactor_train(windows, spec.config, train_cfg)
    fc = probabilistic.deepfactor_forecast(model, task.horizon, num_samples=spec.num_samples,
                                           seed=train_cfg.seed, timestamps=task.test.timestamps[:task.horizon])
    return model, fc, None, f"final_loss={model.final_loss:.6g} epochs={train_cfg.epochs}"


def execute(task: CellTask):
    """Fit and forecast one cell: returns (fitted model, Forecast, windowed points or None, detail)."""
    spec = task.spec
    if isinstance(spec, ArimaSpec):
        return _classical_cell(task)
    if isinstance(spec, RecurrentSpec):
        return _recurrent_cell(task)
    if isinstance(spec, DeepArSpec):
        return _deepar_cell(task)
    if isinstance(spec, DeepFactorSpec):
        return _deepfactor_cell(task)
    raise TypeError(f"unsupported model spec {type(spec).__name__}")


def run_cell(task: CellTask) -> CellResult:
    """Fit, forecast and score one cell; failures are captured, not raised."""
    spec = task.spec
    actual = task.test.values[:task.horizon].copy()
    stamps = task.test.timestamps[:task.horizon].copy()
    result = CellResult(model=spec.name, fraction=task.fraction, actual=actual, timestamps=stamps)
    started = time.perf_counter()
    try:
        _, fc, windowed, detail = execute(task)
        fc.timestamps = stamps
        result.forecast, result.windowed_point, result.detail = fc, windowed, detail
        result.report = evaluate_all(actual, fc.point, task.mape_denominator, strict=False)
        if windowed is not None:
            result.windowed_report = evaluate_all(actual, windowed, task.mape_denominator, strict=False)
    except (ForecastBenchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        logger.warning("cell %s@%g failed: %s", spec.name, task.fraction, result.error)
    result.seconds = time.perf_counter() - started
    return result


def build_tasks(plan: ExperimentPlan, series: Series) -> list:
    full_train, test = split(series, SplitSpec(plan.boundary, 1.0))
    if len(test) < plan.horizon:
        raise ForecastBenchError(f"test segment has {len(test)} points, horizon is {plan.horizon}")
    exog_cache = {}
    tasks = []
    for fraction in plan.fractions:
        train, _ = split(series, SplitSpec(plan.boundary, fraction))
        for spec in plan.models:
            exog = None
            if isinstance(spec, SarimaxSpec):
                key = spec.exog_columns
                if key not in exog_cache:
                    stamps = series.timestamps
                    exog_cache[key] = (load_exog(plan, key, stamps) if key else weekday_dummies(stamps))
                start = len(full_train) - len(train)
                exog = exog_cache[key][start:]
            tasks.append(CellTask(
                spec=spec, fraction=fraction, seed=cell_seed(spec.name, fraction, plan.seed),
                train=train, history=full_train, test=test, horizon=plan.horizon,
                mape_denominator=plan.mape_denominator.value, exog=exog,
            ))
    return tasks


def run(plan: ExperimentPlan, series: Series | None = None) -> BenchResult:
    """Run every (model, fraction) cell of the plan; rows come back canonically sorted."""
    series = load_dataset(plan) if series is None else series
    tasks = build_tasks(plan, series)
    if plan.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            rows = list(pool.map(run_cell, tasks))
    else:
        rows = [run_cell(t) for t in tasks]
    rank = {spec.name: i for i, spec in enumerate(plan.models)}
    rows.sort(key=lambda r: (-r.fraction, rank[r.model]))
    for r in rows:
        logger.info("cell %s@%g %s in %.2fs %s", r.model, r.fraction, "ok" if r.ok else "FAILED",
                    r.seconds, r.detail or r.error)
    return BenchResult(rows=rows, horizon=plan.horizon)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ["model", "fraction", "mode", *METRIC_NAMES, "seconds", "status", "detail"]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _metric_rows(result: BenchResult):
    for r in result.rows:
        modes = [("direct", r.report)]
        if r.windowed_report is not None:
            modes.append(("windowed", r.windowed_report))
        for mode, rep in modes:
            yield r, mode, rep


def forecast_filename(model: str, fraction: float) -> str:
    return f"{model}_{fraction:g}.csv"


def _best(values: list, metric: str):
    finite = [v for v in values if v is not None and not math.isnan(v)]
    if not finite:
        return None
    return max(finite) if metric in HIGHER_IS_BETTER else min(finite)


def _markdown(result: BenchResult) -> str:
    lines = ["# Benchmark metrics", ""]
    if result.horizon:
        lines += [f"Horizon: first {result.horizon} test days. Best value per column in bold.", ""]
    header = "| model | " + " | ".join(METRIC_NAMES) + " | seconds | detail |"
    rule = "|" + "---|" * (len(METRIC_NAMES) + 3)
    fractions = sorted({r.fraction for r in result.rows}, reverse=True)
    if not fractions:
        lines += [header, rule]
    winners = []
    for fraction in fractions:
        for mode in ("direct", "windowed"):
            group = [(r, rep) for r, m, rep in _metric_rows(result) if r.fraction == fraction and m == mode]
            if not group:
                continue
            lines += [f"## Train fraction {fraction:g}, {mode}", "", header, rule]
            best = {m: _best([getattr(rep, m) if rep else None for _, rep in group], m) for m in METRIC_NAMES}
            for r, rep in group:
                cells = []
                for m in METRIC_NAMES:
                    v = getattr(rep, m) if rep else None
                    text = "n/a" if v is None or math.isnan(v) else f"{v:.6g}"
                    cells.append(f"**{text}**" if v is not None and v == best[m] else text)
                detail = r.detail if r.ok else f"FAILED {r.error}"
                lines.append(f"| {r.model} | " + " | ".join(cells) + f" | {r.seconds:.2f} | {detail} |")
            lines.append("")
            for m in METRIC_NAMES:
                if best[m] is not None:
                    names = [r.model for r, rep in group if rep and getattr(rep, m) == best[m]]
                    winners.append(f"| {fraction:g} | {mode} | {m} | {', '.join(names)} |")
    if winners:
        lines += ["## Per-metric winners", "", "| fraction | mode | metric | best |", "|---|---|---|---|",
                  *winners, ""]
    return "\n".join(lines) + "\n"


def _write_table(path: Path, columns, rows) -> None:
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, encoding="utf-8")


def emit_reports(result: BenchResult, out_dir) -> list:
    """Write metrics.csv, metrics.md, per-cell forecast CSVs and per-metric plot data."""
    out = Path(out_dir)
    (out / "forecasts").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for r, mode, rep in _metric_rows(result):
        rows.append([r.model, repr(r.fraction), mode,
                     *[_fmt(getattr(rep, m)) if rep else "" for m in METRIC_NAMES],
                     f"{r.seconds:.3f}", "ok" if r.ok else "failed", r.detail if r.ok else r.error])
    path = out / "metrics.csv"
    _write_table(path, METRICS_COLUMNS, rows)
    written.append(path)

    path = out / "metrics.md"
    path.write_text(_markdown(result), encoding="utf-8")
    written.append(path)

    for r in result.rows:
        n = 0 if r.actual is None else r.actual.size
        fc = r.forecast
        cols = {
            "date": np.datetime_as_string(r.timestamps, unit="D") if n else [],
            "actual": [_fmt(v) for v in r.actual] if n else [],
            "point": [_fmt(v) for v in fc.point] if fc is not None else [""] * n,
        }
        for name, q in QUANTILE_COLUMNS.items():
            has = fc is not None and (q in fc.quantiles or fc.samples is not None)
            cols[name] = [_fmt(v) for v in fc.quantile(q)] if has else [""] * n
        cols["windowed_point"] = [_fmt(v) for v in r.windowed_point] if r.windowed_point is not None else [""] * n
        path = out / "forecasts" / forecast_filename(r.model, r.fraction)
        pd.DataFrame(cols).to_csv(path, index=False, encoding="utf-8")
        written.append(path)

    series_names = []
    for r, mode, _ in _metric_rows(result):
        name = r.model if mode == "direct" else f"{r.model}:windowed"
        if name not in series_names:
            series_names.append(name)
    fractions = sorted({r.fraction for r in result.rows}, reverse=True)
    lookup = {(r.model if mode == "direct" else f"{r.model}:windowed", r.fraction): rep
              for r, mode, rep in _metric_rows(result)}
    for m in METRIC_NAMES:
        lines = ["# fraction " + " ".join(series_names)]
        for fraction in fractions:
            vals = []
            for name in series_names:
                rep = lookup.get((name, fraction))
                v = getattr(rep, m) if rep else float("nan")
                vals.append(repr(float(v)))
            lines.append(" ".join([repr(fraction), *vals]))
        path = out / "plots" / f"{m}.dat"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def read_metrics(path) -> pd.DataFrame:
    """Parse a metrics.csv written by ``emit_reports`` back to full precision."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for col in ("fraction", *METRIC_NAMES):
        frame[col] = [float(v) if v != "" else float("nan") for v in frame[col]]
    return frame
