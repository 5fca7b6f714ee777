"""Likelihood-trained recurrent forecasters: DeepAR-lite and a deep-factor RNN.

DeepAR-lite is an LSTM stack fed the previous (mean-scaled) value plus a
day-of-week one-hot. It emits a Gaussian (or Student-t) per step and forecasts
by ancestral sampling. The deep-factor model splits the series into a global
fixed effect and a local noise scale. The fixed effect is a learned linear
combination of factors produced by a global LSTM over time features. The
noise scale comes from a small, deep local LSTM.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import NonFiniteLoss, ShapeMismatch
from .forecast import DEFAULT_QUANTILES, Forecast
from .ingest import Series, WindowSet
from .neural import (
    Adam,
    CellConfig,
    CellKind,
    Standardizer,
    TrainConfig,
    _head_weights,
    clip_grad_norm,
    forward_cell,
    init_cell_weights,
    load_arrays,
    save_arrays,
    zero_state,
)

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
N_CALENDAR = 7
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Likelihood(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class DeepArConfig:
    num_layers: int = 3
    hidden: int = 40
    scaling: bool = True
    learning_rate: float = 1e-3
    likelihood: Likelihood = Likelihood.GAUSSIAN
    num_samples: int = 200
    calendar: bool = True

    def __post_init__(self):
        object.__setattr__(self, "likelihood", Likelihood(self.likelihood))
        if self.num_layers < 1 or self.hidden < 1:
            raise ValueError("num_layers and hidden must be positive")
        if self.num_samples < 2:
            raise ValueError("num_samples must be at least 2")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    @property
    def input_size(self) -> int:
        return 1 + (N_CALENDAR if self.calendar else 0)

    @property
    def cell(self) -> CellConfig:
        return CellConfig(CellKind.LSTM, self.hidden, self.num_layers, self.input_size)

    @property
    def n_outputs(self) -> int:
        return 3 if self.likelihood is Likelihood.STUDENT_T else 2


@dataclass(frozen=True)
class DeepFactorConfig:
    global_layers: int = 1
    global_hidden: int = 50
    local_layers: int = 5
    local_hidden: int = 5
    num_factors: int = 10

    def __post_init__(self):
        if min(self.global_layers, self.global_hidden, self.local_layers, self.local_hidden, self.num_factors) < 1:
            raise ValueError("all deep-factor sizes must be positive")

    @property
    def global_cell(self) -> CellConfig:
        return CellConfig(CellKind.LSTM, self.global_hidden, self.global_layers, 1 + N_CALENDAR)

    @property
    def local_cell(self) -> CellConfig:
        return CellConfig(CellKind.LSTM, self.local_hidden, self.local_layers, 1 + N_CALENDAR)


def day_of_week(timestamps) -> np.ndarray:
    """One-hot weekday encoding (Monday first), shape (..., 7)."""
    ts = np.asarray(timestamps, dtype="datetime64[D]")
    # 1970-01-01 was a Thursday
    dow = (ts.astype(np.int64) + 3) % 7
    return np.eye(N_CALENDAR)[dow]


def next_business_days(last, horizon: int) -> np.ndarray:
    return np.busday_offset(np.datetime64(last, "D"), np.arange(1, horizon + 1), roll="forward")


def mean_scale(context: np.ndarray) -> np.ndarray:
    """Per-window scale 1 + mean(|context|) along the last axis."""
    return 1.0 + np.mean(np.abs(context), axis=-1)


# ---------------------------------------------------------------------------
# likelihood heads
# ---------------------------------------------------------------------------

def gaussian_nll(y, mu: Tensor, sigma: Tensor) -> Tensor:
    z = (ag.as_tensor(y) - mu) / sigma
    return ag.log(sigma) + 0.5 * z * z + _HALF_LOG_2PI


def student_t_nll(y, mu: Tensor, sigma: Tensor, df: Tensor) -> Tensor:
    z = (ag.as_tensor(y) - mu) / sigma
    half = (df + 1.0) * 0.5
    return (ag.lgamma(df * 0.5) - ag.lgamma(half) + 0.5 * ag.log(df * math.pi) + ag.log(sigma)
            + half * ag.log(1.0 + z * z / df))


def _distribution_params(out: Tensor, likelihood: Likelihood):
    mu = out[:, 0:1]
    sigma = ag.softplus(out[:, 1:2]) + SIGMA_FLOOR
    df = ag.softplus(out[:, 2:3]) + 2.0 if likelihood is Likelihood.STUDENT_T else None
    return mu, sigma, df


def _nll(y, mu, sigma, df, likelihood: Likelihood) -> Tensor:
    if likelihood is Likelihood.STUDENT_T:
        return student_t_nll(y, mu, sigma, df)
    return gaussian_nll(y, mu, sigma)


# ---------------------------------------------------------------------------
# DeepAR-lite
# ---------------------------------------------------------------------------

@dataclass
class FittedDeepAr:
    config: DeepArConfig
    train: TrainConfig
    weights: dict
    context_len: int
    horizon: int
    loss_history: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def tensors(self) -> dict:
        return {k: Tensor(v) for k, v in self.weights.items()}


def _deepar_inputs(config: DeepArConfig, prev_scaled: np.ndarray, dates) -> np.ndarray:
    """Stack (batch, steps) previous values with the calendar of the predicted dates."""
    x = prev_scaled[..., None]
    if config.calendar:
        x = np.concatenate([x, day_of_week(dates)], axis=-1)
    return x


def _deepar_step(config: DeepArConfig, params: dict, x_t: np.ndarray, state):
    h, state = forward_cell(config.cell, params, x_t, state)
    return h @ params["head.W"] + params["head.b"], state


def deepar_loss(config: DeepArConfig, params: dict, inputs: np.ndarray, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` (batch, steps) under teacher forcing."""
    state = zero_state(config.cell, inputs.shape[0])
    terms = []
    for t in range(inputs.shape[1]):
        out, state = _deepar_step(config, params, inputs[:, t, :], state)
        mu, sigma, df = _distribution_params(out, config.likelihood)
        terms.append(_nll(targets[:, t:t + 1], mu, sigma, df, config.likelihood))
    return ag.concat(terms, axis=1).mean()


def _init_deepar(config: DeepArConfig, rng: np.random.Generator) -> dict:
    weights = init_cell_weights(config.cell, rng)
    weights.update(_head_weights(config.hidden, config.n_outputs, rng))
    return weights


def _window_dates(windows: WindowSet) -> np.ndarray:
    if windows.source is not None:
        return windows.window_timestamps()
    width = windows.context_len + windows.horizon
    return np.broadcast_to(np.arange(width).astype("datetime64[D]"), (len(windows), width))


def deepar_train(windows: WindowSet, config: DeepArConfig = DeepArConfig(), train: TrainConfig = TrainConfig()) -> FittedDeepAr:
    """Fit DeepAR-lite by teacher-forced Gaussian (or Student-t) likelihood.

    Each window is divided by its scale 1 + mean(|context|) when scaling is on.
    Adam uses ``config.learning_rate``. ``train`` supplies epochs, batch size,
    seed and the clipping norm.
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    rng = np.random.default_rng(train.seed)
    full = windows.full
    nu = mean_scale(windows.contexts) if config.scaling else np.ones(len(full))
    scaled = full / nu[:, None]
    dates = _window_dates(windows)
    inputs = _deepar_inputs(config, scaled[:, :-1], dates[:, 1:])
    targets = scaled[:, 1:]

    params = {k: ag.parameter(v) for k, v in _init_deepar(config, rng).items()}
    opt = Adam(params, lr=config.learning_rate)
    history, n = [], len(full)
    for epoch in range(train.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, train.batch_size)):
            idx = order[start:start + train.batch_size]
            loss = deepar_loss(config, params, inputs[idx], targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"DeepAR loss became {value} at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, train.grad_clip)
            opt.step()
            total += value * len(idx)
        history.append(total / n)
    return FittedDeepAr(config, train, {k: p.data.copy() for k, p in params.items()},
                        windows.context_len, windows.horizon, history)


def _context_arrays(context, context_timestamps):
    if isinstance(context, Series):
        return context.values.astype(np.float64), context.timestamps
    values = np.asarray(context, dtype=np.float64).ravel()
    if context_timestamps is None:
        # Without dates, lay the context on consecutive business days.
        context_timestamps = np.busday_offset("2000-01-03", np.arange(values.size), roll="forward")
    return values, np.asarray(context_timestamps, dtype="datetime64[D]")


def _deepar_warm(model: FittedDeepAr, values, dates, params):
    """Scale, run the context through the network and return (nu, state, last scaled value)."""
    cfg = model.config
    ctx = values[-model.context_len:] if values.size >= model.context_len else values
    cdates = dates[-ctx.size:]
    nu = float(mean_scale(ctx)) if cfg.scaling else 1.0
    z = ctx / nu
    state = zero_state(cfg.cell, 1)
    if z.size > 1:
        x = _deepar_inputs(cfg, z[None, :-1], cdates[None, 1:])
        for t in range(x.shape[1]):
            _, state = _deepar_step(cfg, params, x[:, t, :], state)
    return nu, state, z[-1]


def deepar_one_step(model: FittedDeepAr, context, context_timestamps=None, next_timestamp=None) -> tuple[float, float]:
    """Predictive mean and scale (original units) for the value after ``context``."""
    values, dates = _context_arrays(context, context_timestamps)
    params = model.tensors()
    with ag.no_grad():
        nu, state, last = _deepar_warm(model, values, dates, params)
        nxt = next_business_days(dates[-1], 1) if next_timestamp is None else np.array([next_timestamp], "datetime64[D]")
        out, _ = _deepar_step(model.config, params, _deepar_inputs(model.config, np.array([[last]]), nxt[None, :])[:, 0, :], state)
        mu, sigma, _ = _distribution_params(out, model.config.likelihood)
    return float(mu.data[0, 0]) * nu, float(sigma.data[0, 0]) * nu


def deepar_forecast(
    model: FittedDeepAr,
    context,
    horizon: int,
    num_samples: int | None = None,
    seed: int = 0,
    context_timestamps=None,
    timestamps=None,
    quantile_levels=DEFAULT_QUANTILES,
) -> Forecast:
    """Ancestral sampling: draw each step, feed the draw back, rescale by the context scale."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    values, dates = _context_arrays(context, context_timestamps)
    if values.size < 1:
        raise ShapeMismatch("context must contain at least one value")
    cfg = model.config
    num_samples = num_samples or cfg.num_samples
    future = next_business_days(dates[-1], horizon) if timestamps is None else np.asarray(timestamps, "datetime64[D]")
    rng = np.random.default_rng(seed)
    params = model.tensors()
    draws = np.empty((num_samples, horizon))
    with ag.no_grad():
        nu, state, last = _deepar_warm(model, values, dates, params)
        state = _tile_state(state, num_samples)
        prev = np.full(num_samples, last)
        for t in range(horizon):
            x = _deepar_inputs(cfg, prev[:, None], np.broadcast_to(future[t], (num_samples, 1)))[:, 0, :]
            out, state = _deepar_step(cfg, params, x, state)
            mu, sigma, df = _distribution_params(out, cfg.likelihood)
            noise = rng.standard_t(df.data[:, 0]) if df is not None else rng.standard_normal(num_samples)
            prev = mu.data[:, 0] + sigma.data[:, 0] * noise
            draws[:, t] = prev
    return Forecast.from_samples(draws * nu, quantile_levels, timestamps=future)


def _tile_state(state, n: int):
    def tile(t):
        return Tensor(np.repeat(t.data, n, axis=0))

    return [tuple(tile(s) for s in layer) if isinstance(layer, tuple) else tile(layer) for layer in state]


# ---------------------------------------------------------------------------
# deep factor RNN
# ---------------------------------------------------------------------------

@dataclass
class FittedDeepFactor:
    config: DeepFactorConfig
    train: TrainConfig
    weights: dict
    scaler: Standardizer
    n_train: int
    context_len: int
    tail_timestamps: np.ndarray
    loss_history: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def tensors(self) -> dict:
        return {k: Tensor(v) for k, v in self.weights.items()}


def time_features(positions: np.ndarray, dates, n_train: int) -> np.ndarray:
    """Normalized position in the training span plus weekday one-hot, shape (..., 8)."""
    pos = np.asarray(positions, dtype=np.float64) / max(n_train - 1, 1)
    return np.concatenate([pos[..., None], day_of_week(dates)], axis=-1)


def _init_deepfactor(config: DeepFactorConfig, rng: np.random.Generator) -> dict:
    w = init_cell_weights(config.global_cell, rng, prefix="g.")
    w.update(_head_weights(config.global_hidden, config.num_factors, rng, prefix="g.head."))
    w["loadings"] = np.zeros((config.num_factors, 1))
    w.update(init_cell_weights(config.local_cell, rng, prefix="n."))
    w.update(_head_weights(config.local_hidden, 1, rng, prefix="n.head."))
    return w


def deepfactor_components(config: DeepFactorConfig, params: dict, feats: np.ndarray):
    """Fixed effect and noise scale per step (standardized units) as lists of (batch, 1) tensors."""
    batch, steps, _ = feats.shape
    gs = zero_state(config.global_cell, batch)
    ls = zero_state(config.local_cell, batch)
    fixed, scale = [], []
    for t in range(steps):
        x = feats[:, t, :]
        hg, gs = forward_cell(config.global_cell, params, x, gs, prefix="g.")
        factors = hg @ params["g.head.W"] + params["g.head.b"]
        fixed.append(factors @ params["loadings"])
        hl, ls = forward_cell(config.local_cell, params, x, ls, prefix="n.")
        scale.append(ag.softplus(hl @ params["n.head.W"] + params["n.head.b"]) + SIGMA_FLOOR)
    return fixed, scale


def deepfactor_loss(config: DeepFactorConfig, params: dict, feats: np.ndarray, targets: np.ndarray) -> Tensor:
    fixed, scale = deepfactor_components(config, params, feats)
    terms = [gaussian_nll(targets[:, t:t + 1], f, s) for t, (f, s) in enumerate(zip(fixed, scale))]
    return ag.concat(terms, axis=1).mean()


def deepfactor_train(windows: WindowSet, config: DeepFactorConfig = DeepFactorConfig(),
                     train: TrainConfig = TrainConfig()) -> FittedDeepFactor:
    """Jointly fit global factors, their loadings and the local noise model."""
    if len(windows) == 0:
        raise ValueError("no training windows")
    if windows.source is None:
        raise ValueError("deep-factor training needs the windows' source series for time features")
    rng = np.random.default_rng(train.seed)
    source = windows.source
    n_train = len(source)
    scaler = Standardizer.fit(source.values)
    width = windows.context_len + windows.horizon
    positions = windows.origin_indices[:, None] + np.arange(width)[None, :]
    feats = time_features(positions, source.timestamps[positions], n_train)
    targets = scaler.transform(windows.full)

    params = {k: ag.parameter(v) for k, v in _init_deepfactor(config, rng).items()}
    opt = Adam(params, lr=train.learning_rate)
    history, n = [], len(targets)
    for epoch in range(train.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, train.batch_size)):
            idx = order[start:start + train.batch_size]
            loss = deepfactor_loss(config, params, feats[idx], targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"deep-factor loss became {value} at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, train.grad_clip)
            opt.step()
            total += value * len(idx)
        history.append(total / n)
    return FittedDeepFactor(
        config=config, train=train, weights={k: p.data.copy() for k, p in params.items()},
        scaler=scaler, n_train=n_train, context_len=windows.context_len,
        tail_timestamps=source.timestamps[-windows.context_len:].copy(), loss_history=history,
    )


def deepfactor_forecast(model: FittedDeepFactor, horizon: int, num_samples: int = 200, seed: int = 0,
                        timestamps=None, quantile_levels=DEFAULT_QUANTILES) -> Forecast:
    """Fixed effect over the next ``horizon`` steps plus Gaussian noise at the local scale."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    future = (next_business_days(model.tail_timestamps[-1], horizon) if timestamps is None
              else np.asarray(timestamps, "datetime64[D]"))
    if future.size != horizon:
        raise ShapeMismatch(f"{future.size} timestamps for horizon {horizon}")
    c = model.context_len
    positions = np.arange(model.n_train - c, model.n_train + horizon)
    dates = np.concatenate([model.tail_timestamps, future])
    feats = time_features(positions, dates, model.n_train)[None]
    with ag.no_grad():
        fixed, scale = deepfactor_components(model.config, model.tensors(), feats)
    mu = np.array([f.data[0, 0] for f in fixed[c:]])
    sd = np.array([s.data[0, 0] for s in scale[c:]])
    rng = np.random.default_rng(seed)
    draws = mu[None, :] + sd[None, :] * rng.standard_normal((num_samples, horizon))
    point = model.scaler.inverse(mu)
    samples = model.scaler.inverse(draws)
    ordered = np.sort(samples, axis=0)
    qs = {q: np.quantile(ordered, q, axis=0) for q in sorted(quantile_levels)}
    return Forecast(point=point, samples=samples, quantiles=qs, timestamps=future)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save(model, path):
    if isinstance(model, FittedDeepAr):
        meta = {"config": asdict(model.config), "train": asdict(model.train),
                "context_len": model.context_len, "horizon": model.horizon, "loss_history": model.loss_history}
        return save_arrays(path, "deepar", meta, model.weights)
    if isinstance(model, FittedDeepFactor):
        meta = {"config": asdict(model.config), "train": asdict(model.train), "scaler": asdict(model.scaler),
                "n_train": model.n_train, "context_len": model.context_len,
                "tail_timestamps": [str(t) for t in model.tail_timestamps], "loss_history": model.loss_history}
        return save_arrays(path, "deepfactor", meta, model.weights)
    raise TypeError(f"cannot serialize {type(model).__name__}")


def restore(kind: str, meta: dict, weights: dict):
    if kind == "deepar":
        return FittedDeepAr(DeepArConfig(**meta["config"]), TrainConfig(**meta["train"]), weights,
                            meta["context_len"], meta["horizon"], list(meta["loss_history"]))
    if kind == "deepfactor":
        return FittedDeepFactor(
            config=DeepFactorConfig(**meta["config"]), train=TrainConfig(**meta["train"]), weights=weights,
            scaler=Standardizer(**meta["scaler"]), n_train=meta["n_train"], context_len=meta["context_len"],
            tail_timestamps=np.array(meta["tail_timestamps"], dtype="datetime64[D]"),
            loss_history=list(meta["loss_history"]),
        )
    raise ValueError(f"unknown model kind {kind!r}")
