"""Recurrent point forecasters (vanilla RNN, GRU, LSTM) trained with BPTT and Adam."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContextTooShort, NonFiniteLoss, ShapeMismatch
from .forecast import Forecast
from .ingest import WindowSet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CellKind(str, enum.Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"

    @property
    def gates(self) -> int:
        return {"rnn": 1, "gru": 3, "lstm": 4}[self.value]


@dataclass(frozen=True)
class CellConfig:
    kind: CellKind = CellKind.LSTM
    hidden_size: int = 32
    num_layers: int = 1
    input_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind(self.kind))
        if self.hidden_size < 1 or self.num_layers < 1 or self.input_size < 1:
            raise ValueError("hidden_size, num_layers and input_size must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


def init_cell_weights(config: CellConfig, rng: np.random.Generator, prefix: str = "") -> dict:
    """Uniform(-k, k) weights with k = 1/sqrt(hidden); LSTM forget-gate bias starts at 1."""
    H, G = config.hidden_size, config.kind.gates
    k = 1.0 / math.sqrt(H)
    weights = {}
    for layer in range(config.num_layers):
        n_in = config.input_size if layer == 0 else H
        p = f"{prefix}l{layer}."
        weights[p + "W"] = rng.uniform(-k, k, (n_in, G * H))
        weights[p + "U"] = rng.uniform(-k, k, (H, G * H))
        bias = np.zeros(G * H)
        if config.kind is CellKind.LSTM:
            bias[H:2 * H] = 1.0
        weights[p + "b"] = bias
        if config.kind is CellKind.GRU:
            weights[p + "bh"] = np.zeros(G * H)
    return weights


def zero_state(config: CellConfig, batch: int) -> list:
    shape = (batch, config.hidden_size)
    if config.kind is CellKind.LSTM:
        return [(Tensor(np.zeros(shape)), Tensor(np.zeros(shape))) for _ in range(config.num_layers)]
    return [Tensor(np.zeros(shape)) for _ in range(config.num_layers)]


def _layer_step(kind: CellKind, H: int, W, U, b, bh, x, state):
    if kind is CellKind.RNN:
        h = ag.tanh(x @ W + state @ U + b)
        return h, h
    if kind is CellKind.GRU:
        gi = x @ W + b
        gh = state @ U + bh
        r = ag.sigmoid(gi[:, :H] + gh[:, :H])
        z = ag.sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
        n = ag.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
        h = n + z * (state - n)
        return h, h
    h_prev, c_prev = state
    gates = x @ W + h_prev @ U + b
    i = ag.sigmoid(gates[:, :H])
    f = ag.sigmoid(gates[:, H:2 * H])
    g = ag.tanh(gates[:, 2 * H:3 * H])
    o = ag.sigmoid(gates[:, 3 * H:])
    c = f * c_prev + i * g
    h = o * ag.tanh(c)
    return h, (h, c)


def forward_cell(config: CellConfig, weights: dict, x_t, state: list, prefix: str = ""):
    """One time step through the layer stack; returns (top-layer output, new state)."""
    x = ag.as_tensor(x_t)
    if x.data.ndim != 2 or x.shape[1] != config.input_size:
        raise ShapeMismatch(f"input has shape {x.shape}, expected (batch, {config.input_size})")
    if len(state) != config.num_layers:
        raise ShapeMismatch(f"state has {len(state)} layers, config has {config.num_layers}")
    H = config.hidden_size
    new_state = []
    for layer in range(config.num_layers):
        p = f"{prefix}l{layer}."
        x, s = _layer_step(config.kind, H, weights[p + "W"], weights[p + "U"], weights[p + "b"],
                           weights.get(p + "bh"), x, state[layer])
        new_state.append(s)
    return x, new_state


class Adam:
    """Adam with bias correction over a dict of parameter tensors."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    @classmethod
    def fit(cls, values) -> "Standardizer":
        values = np.asarray(values, dtype=np.float64)
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0 else 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class FittedNeural:
    config: CellConfig
    train: TrainConfig
    weights: dict
    scaler: Standardizer
    context_len: int
    horizon: int
    loss_history: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def tensors(self) -> dict:
        return {k: Tensor(v) for k, v in self.weights.items()}


def _head_weights(hidden: int, out: int, rng: np.random.Generator, prefix: str = "head.") -> dict:
    k = 1.0 / math.sqrt(hidden)
    return {prefix + "W": rng.uniform(-k, k, (hidden, out)), prefix + "b": np.zeros(out)}


def _run_point_net(config: CellConfig, params: dict, inputs: np.ndarray, state=None):
    """Feed a (batch, steps) block of standardized values; returns per-step predictions."""
    batch, steps = inputs.shape
    state = zero_state(config, batch) if state is None else state
    preds = []
    for t in range(steps):
        h, state = forward_cell(config, params, inputs[:, t:t + 1], state)
        preds.append(h @ params["head.W"] + params["head.b"])
    return preds, state


def _check_finite(loss: float, epoch: int, batch: int) -> None:
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch {batch}")


def train_point_forecaster(windows: WindowSet, config: CellConfig, train: TrainConfig) -> FittedNeural:
    """Teacher-forced one-step-ahead training on every (context + target) window.

    Values are standardized with the training series' mean and standard
    deviation; the loss is the mean squared one-step error over all positions.
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    if config.input_size != 1:
        raise ShapeMismatch("point forecasters take a single input feature")
    rng = np.random.default_rng(train.seed)
    source = windows.source.values if windows.source is not None else windows.full.ravel()
    scaler = Standardizer.fit(source)
    block = scaler.transform(windows.full)
    inputs, targets = block[:, :-1], block[:, 1:]

    weights = init_cell_weights(config, rng)
    weights.update(_head_weights(config.hidden_size, 1, rng))
    params = {k: ag.parameter(v) for k, v in weights.items()}
    opt = Adam(params, lr=train.learning_rate)
    history = []
    n = len(block)
    for epoch in range(train.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, train.batch_size)):
            idx = order[start:start + train.batch_size]
            preds, _ = _run_point_net(config, params, inputs[idx])
            pred = ag.concat(preds, axis=1)
            diff = pred - targets[idx]
            loss = (diff * diff).mean()
            _check_finite(loss.item(), epoch, b)
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, train.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
    logger.debug("trained %s: final loss %.6g", config.kind.value, history[-1])
    return FittedNeural(
        config=config, train=train, weights={k: p.data.copy() for k, p in params.items()},
        scaler=scaler, context_len=windows.context_len, horizon=windows.horizon, loss_history=history,
    )


def one_step_predictions(model: FittedNeural, windows: WindowSet) -> np.ndarray:
    """Teacher-forced one-step predictions for positions 1.. of every window (original scale)."""
    block = model.scaler.transform(windows.full)
    with ag.no_grad():
        preds, _ = _run_point_net(model.config, model.tensors(), block[:, :-1])
    return model.scaler.inverse(np.concatenate([p.data for p in preds], axis=1))


def forecast_recursive(model: FittedNeural, context, horizon: int, timestamps=None) -> Forecast:
    """Warm up on the last ``context_len`` values, then feed each prediction back in."""
    context = np.asarray(context, dtype=np.float64).ravel()
    if context.size < model.context_len:
        raise ContextTooShort(f"need {model.context_len} context values, got {context.size}")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    z = model.scaler.transform(context[-model.context_len:])[None, :]
    params = model.tensors()
    out = []
    with ag.no_grad():
        preds, state = _run_point_net(model.config, params, z)
        nxt = preds[-1].data
        out.append(nxt[0, 0])
        for _ in range(horizon - 1):
            preds, state = _run_point_net(model.config, params, nxt, state)
            nxt = preds[-1].data
            out.append(nxt[0, 0])
    return Forecast(point=model.scaler.inverse(np.array(out)), timestamps=timestamps)


# ---------------------------------------------------------------------------
# serialization shared with the probabilistic models
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def save_arrays(path, kind: str, meta: dict, weights: dict) -> Path:
    """Write weights plus JSON metadata to a versioned ``.npz`` archive."""
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": _jsonable(meta)}
    arrays = {f"w/{k}": np.asarray(v) for k, v in weights.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8), **arrays)
    return path


def load_arrays(path) -> tuple[str, dict, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('format_version')}")
        weights = {k[2:]: data[k].copy() for k in data.files if k.startswith("w/")}
    return header["kind"], header["meta"], weights


def save_model(model, path) -> Path:
    """Serialize any fitted recurrent model from this package."""
    from . import probabilistic

    if isinstance(model, FittedNeural):
        meta = {"config": asdict(model.config), "train": asdict(model.train),
                "scaler": asdict(model.scaler), "context_len": model.context_len,
                "horizon": model.horizon, "loss_history": model.loss_history}
        return save_arrays(path, "point", meta, model.weights)
    return probabilistic.save(model, path)


def load_model(path):
    from . import probabilistic

    kind, meta, weights = load_arrays(path)
    if kind == "point":
        return FittedNeural(
            config=CellConfig(**meta["config"]), train=TrainConfig(**meta["train"]), weights=weights,
            scaler=Standardizer(**meta["scaler"]), context_len=meta["context_len"],
            horizon=meta["horizon"], loss_history=list(meta["loss_history"]),
        )
    return probabilistic.restore(kind, meta, weights)
