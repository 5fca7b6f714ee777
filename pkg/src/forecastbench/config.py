"""Experiment configuration: model specs and the TOML plan file.

A plan file looks like::

    schema_version = 1
    seed = 0
    horizon = 36
    fractions = [1.0, 0.5, 0.25]
    boundary = 2019-12-31

    [dataset]
    path = "prices.csv"          # relative to the config file, or "bundled:index"

    [[models]]
    kind = "arima"

    [[models]]
    kind = "lstm"
    hidden_size = 32
    [models.train]
    epochs = 50

Unknown keys anywhere are rejected with a ``ConfigError`` naming the key.
"""

from __future__ import annotations

import datetime as dt
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .classical import SeasonalGrid
from .errors import ConfigError
from .ingest import DEFAULT_BOUNDARY
from .metrics import MapeDenominator
from .neural import CellConfig, CellKind, TrainConfig
from .probabilistic import DeepArConfig, DeepFactorConfig, Likelihood

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
DEFAULT_FRACTIONS = (1.0, 0.5, 0.25)
DEFAULT_HORIZON = 36
BUNDLED_PREFIX = "bundled:"


# ---------------------------------------------------------------------------
# model specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArimaSpec:
    name: str = "arima"
    p: tuple = (0, 1, 2)
    q: tuple = (0, 1, 2)
    d: int | None = None
    criterion: str = "bic"
    kind = "arima"

    def __post_init__(self):
        _check_grid("p", self.p)
        _check_grid("q", self.q)
        if self.d is not None and not 0 <= self.d <= 2:
            raise ConfigError("d", "must lie in 0..2")
        if self.criterion not in ("aic", "bic"):
            raise ConfigError("criterion", "must be 'aic' or 'bic'")

    @property
    def seasonal(self) -> SeasonalGrid | None:
        return None


@dataclass(frozen=True)
class SarimaSpec(ArimaSpec):
    name: str = "sarima"
    P: tuple = (0, 1)
    D: tuple = (0,)
    Q: tuple = (0, 1)
    m: int = 5
    kind = "sarima"

    def __post_init__(self):
        super().__post_init__()
        for key in ("P", "D", "Q"):
            _check_grid(key, getattr(self, key))
        if any(v > 1 for v in self.D):
            raise ConfigError("D", "seasonal differencing order must be 0 or 1")
        if self.m < 2:
            raise ConfigError("m", "seasonal period must be at least 2")

    @property
    def seasonal(self) -> SeasonalGrid:
        return SeasonalGrid(P=self.P, D=self.D, Q=self.Q, m=self.m)


@dataclass(frozen=True)
class SarimaxSpec(SarimaSpec):
    name: str = "sarimax"
    # Empty means a weekday one-hot (Tuesday..Friday, Monday as reference).
    exog_columns: tuple = ()
    kind = "sarimax"


@dataclass(frozen=True)
class RecurrentSpec:
    name: str = "lstm"
    cell: CellConfig = CellConfig()
    train: TrainConfig = TrainConfig()
    context_len: int = 5
    window_horizon: int = 5

    @property
    def kind(self) -> str:
        return self.cell.kind.value


@dataclass(frozen=True)
class DeepArSpec:
    name: str = "deepar"
    config: DeepArConfig = DeepArConfig()
    train: TrainConfig = TrainConfig()
    context_len: int = 5
    window_horizon: int = 5
    kind = "deepar"


@dataclass(frozen=True)
class DeepFactorSpec:
    name: str = "deepfactor"
    config: DeepFactorConfig = DeepFactorConfig()
    train: TrainConfig = TrainConfig()
    context_len: int = 5
    window_horizon: int = 5
    num_samples: int = 200
    kind = "deepfactor"


ModelSpec = ArimaSpec | SarimaSpec | SarimaxSpec | RecurrentSpec | DeepArSpec | DeepFactorSpec
CLASSICAL_KINDS = ("arima", "sarima", "sarimax")
RECURRENT_KINDS = tuple(k.value for k in CellKind)
MODEL_KINDS = CLASSICAL_KINDS + RECURRENT_KINDS + ("deepar", "deepfactor")


def _check_grid(key: str, grid) -> None:
    if not grid:
        raise ConfigError(key, "grid must be non-empty")
    if any(not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= 5 for v in grid):
        raise ConfigError(key, "grid values must be integers in 0..5")


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    path: str
    value_column: str = "Close"
    date_column: str = "Date"

    def resolve(self) -> Path:
        if self.path.startswith(BUNDLED_PREFIX):
            from .simulate import bundled_path

            kind = self.path[len(BUNDLED_PREFIX):]
            try:
                return Path(str(bundled_path(kind)))
            except KeyError:
                raise ConfigError("dataset.path", f"no bundled dataset {kind!r}") from None
        return Path(self.path)


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: DatasetSpec
    models: tuple = ()
    boundary: dt.date = DEFAULT_BOUNDARY
    fractions: tuple = DEFAULT_FRACTIONS
    horizon: int = DEFAULT_HORIZON
    seed: int = 0
    mape_denominator: MapeDenominator = MapeDenominator.OUTPUT
    output_dir: str = "results"
    jobs: int = 1

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise ConfigError("fractions", "must be non-empty")
        if any(not 0.0 < f <= 1.0 for f in fr):
            raise ConfigError("fractions", "every fraction must lie in (0, 1]")
        if len(set(fr)) != len(fr):
            raise ConfigError("fractions", "fractions must be distinct")
        object.__setattr__(self, "fractions", tuple(sorted(fr, reverse=True)))
        if self.horizon < 1:
            raise ConfigError("horizon", "must be at least 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")
        names = [m.name for m in self.models]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ConfigError("models", f"duplicate model name {sorted(dup)[0]!r}")
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "mape_denominator", MapeDenominator(self.mape_denominator))

    def with_overrides(self, **changes) -> "ExperimentPlan":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _take(table: dict, where: str, allowed: dict) -> dict:
    """Check ``table`` keys against ``allowed`` (key -> type or tuple of types)."""
    out = {}
    for key, value in table.items():
        full = f"{where}.{key}" if where else key
        if key not in allowed:
            raise ConfigError(full, "unknown key")
        want = allowed[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and isinstance(value, bool):
            raise ConfigError(full, "expected an integer")
        if want is list:
            if not isinstance(value, list):
                raise ConfigError(full, "expected an array")
        elif not isinstance(value, want):
            name = want.__name__ if isinstance(want, type) else " or ".join(t.__name__ for t in want)
            raise ConfigError(full, f"expected {name}, got {type(value).__name__}")
        out[key] = value
    return out


_TRAIN_KEYS = {"learning_rate": float, "epochs": int, "batch_size": int, "grad_clip": float}


def _train_config(table, where: str, seed: int, allow_lr: bool = True) -> TrainConfig:
    if table is None:
        table = {}
    if not isinstance(table, dict):
        raise ConfigError(where, "expected a table")
    keys = dict(_TRAIN_KEYS) if allow_lr else {k: v for k, v in _TRAIN_KEYS.items() if k != "learning_rate"}
    values = _take(table, where, keys)
    return _build(TrainConfig, where, seed=seed, **values)


def _build(cls, where: str, **kwargs):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}.{exc.key}", str(exc).split(": ", 1)[-1]) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None


def _tuple_of_ints(values: dict, keys) -> dict:
    return {k: tuple(v) if k in keys else v for k, v in values.items()}


def parse_model(table: dict, index: int, seed: int = 0) -> ModelSpec:
    """Build one ModelSpec from a ``[[models]]`` table."""
    where = f"models[{index}]"
    if not isinstance(table, dict):
        raise ConfigError(where, "expected a table")
    kind = table.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {', '.join(MODEL_KINDS)}, got {kind!r}")
    body = {k: v for k, v in table.items() if k != "kind"}
    name = body.pop("name", kind)
    if not isinstance(name, str) or not name or "|" in name or "/" in name:
        raise ConfigError(f"{where}.name", "must be a non-empty string without '|' or '/'")

    if kind in CLASSICAL_KINDS:
        allowed = {"p": list, "q": list, "d": int, "criterion": str}
        if kind != "arima":
            allowed.update({"P": list, "D": list, "Q": list, "m": int})
        if kind == "sarimax":
            allowed["exog_columns"] = list
        values = _tuple_of_ints(_take(body, where, allowed), ("p", "q", "P", "D", "Q", "exog_columns"))
        cls = {"arima": ArimaSpec, "sarima": SarimaSpec, "sarimax": SarimaxSpec}[kind]
        return _build(cls, where, name=name, **values)

    shared = {"context_len": int, "window_horizon": int, "train": dict}
    if kind in RECURRENT_KINDS:
        allowed = dict(shared, hidden_size=int, num_layers=int)
        values = _take(body, where, allowed)
        train = _train_config(values.pop("train", None), f"{where}.train", seed)
        windows = {k: values.pop(k) for k in ("context_len", "window_horizon") if k in values}
        cell = _build(CellConfig, where, kind=kind, **values)
        spec = _build(RecurrentSpec, where, name=name, cell=cell, train=train, **windows)
    elif kind == "deepar":
        allowed = dict(shared, num_layers=int, hidden=int, scaling=bool, learning_rate=float,
                       likelihood=str, num_samples=int, calendar=bool)
        values = _take(body, where, allowed)
        train = _train_config(values.pop("train", None), f"{where}.train", seed, allow_lr=False)
        windows = {k: values.pop(k) for k in ("context_len", "window_horizon") if k in values}
        if "likelihood" in values and values["likelihood"] not in [l.value for l in Likelihood]:
            raise ConfigError(f"{where}.likelihood", f"unknown likelihood {values['likelihood']!r}")
        cfg = _build(DeepArConfig, where, **values)
        spec = _build(DeepArSpec, where, name=name, config=cfg, train=train, **windows)
    else:
        allowed = dict(shared, global_layers=int, global_hidden=int, local_layers=int,
                       local_hidden=int, num_factors=int, num_samples=int)
        values = _take(body, where, allowed)
        train = _train_config(values.pop("train", None), f"{where}.train", seed)
        outer = {k: values.pop(k) for k in ("context_len", "window_horizon", "num_samples") if k in values}
        cfg = _build(DeepFactorConfig, where, **values)
        spec = _build(DeepFactorSpec, where, name=name, config=cfg, train=train, **outer)
    if spec.context_len < 1 or spec.window_horizon < 1:
        raise ConfigError(where, "context_len and window_horizon must be positive")
    return spec


_PLAN_KEYS = {
    "schema_version": int,
    "seed": int,
    "horizon": int,
    "fractions": list,
    "boundary": (dt.date, str),
    "mape_denominator": str,
    "output_dir": str,
    "jobs": int,
    "dataset": dict,
    "models": list,
}
_DATASET_KEYS = {"path": str, "value_column": str, "date_column": str}


def parse_plan(doc: dict, base_dir: Path | None = None) -> ExperimentPlan:
    """Validate a parsed TOML document and build the ExperimentPlan."""
    values = _take(doc, "", _PLAN_KEYS)
    version = values.pop("schema_version", None)
    if version is None:
        raise ConfigError("schema_version", "missing (expected 1)")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version} (expected {SCHEMA_VERSION})")
    if "dataset" not in values:
        raise ConfigError("dataset", "missing table")
    ds = _take(values.pop("dataset"), "dataset", _DATASET_KEYS)
    if "path" not in ds:
        raise ConfigError("dataset.path", "missing")
    if base_dir is not None and not ds["path"].startswith(BUNDLED_PREFIX):
        ds["path"] = str((base_dir / ds["path"]))
    dataset = DatasetSpec(**ds)

    boundary = values.pop("boundary", DEFAULT_BOUNDARY)
    if isinstance(boundary, str):
        try:
            boundary = dt.date.fromisoformat(boundary)
        except ValueError:
            raise ConfigError("boundary", f"not an ISO date: {boundary!r}") from None
    elif isinstance(boundary, dt.datetime):
        boundary = boundary.date()
    if "fractions" in values:
        fr = values.pop("fractions")
        if any(isinstance(f, bool) or not isinstance(f, (int, float)) for f in fr):
            raise ConfigError("fractions", "expected an array of numbers")
        values["fractions"] = tuple(float(f) for f in fr)
    if "mape_denominator" in values and values["mape_denominator"] not in [m.value for m in MapeDenominator]:
        raise ConfigError("mape_denominator", "must be 'output' or 'target'")
    seed = values.get("seed", 0)
    models = tuple(parse_model(t, i, seed) for i, t in enumerate(values.pop("models", [])))
    if not models:
        raise ConfigError("models", "at least one [[models]] table is required")
    if "output_dir" in values and base_dir is not None:
        values["output_dir"] = str(base_dir / values["output_dir"])
    return ExperimentPlan(dataset=dataset, models=models, boundary=boundary, **values)


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"malformed TOML: {exc}") from None
    return parse_plan(doc, base_dir=path.parent)


def spec_fields(spec) -> dict:
    """Flat description of a spec, for logs and reports."""
    return {f.name: getattr(spec, f.name) for f in fields(spec)}
