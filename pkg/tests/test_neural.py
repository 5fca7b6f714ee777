import numpy as np
import pytest

from forecastbench import autograd as ag
from forecastbench.errors import ContextTooShort, ShapeMismatch
from forecastbench.ingest import Series, make_windows
from forecastbench.neural import (
    Adam,
    CellConfig,
    CellKind,
    Standardizer,
    TrainConfig,
    clip_grad_norm,
    forecast_recursive,
    forward_cell,
    init_cell_weights,
    load_model,
    one_step_predictions,
    save_model,
    train_point_forecaster,
    zero_state,
)
from forecastbench.simulate import business_days

from gradutil import gradcheck


def series(values):
    return Series(business_days(len(values)), np.asarray(values, dtype=float), "Close")


def unrolled_loss(config):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 6, config.input_size))
    y = rng.normal(size=(4, config.hidden_size))

    def loss(params):
        state = zero_state(config, 4)
        total = None
        for t in range(x.shape[1]):
            h, state = forward_cell(config, params, x[:, t, :], state)
            term = ((h - y) * (h - y)).mean()
            total = term if total is None else total + term
        return total

    return loss


class TestCells:
    def test_zero_rnn(self):
        cfg = CellConfig(CellKind.RNN, 4, 1, 2)
        w = {k: np.zeros_like(v) for k, v in init_cell_weights(cfg, np.random.default_rng(0)).items()}
        h, _ = forward_cell(cfg, w, np.random.default_rng(1).normal(size=(3, 2)), zero_state(cfg, 3))
        assert np.all(h.data == 0.0)

    def test_lstm_zero_input(self):
        cfg = CellConfig(CellKind.LSTM, 5, 1, 1)
        w = init_cell_weights(cfg, np.random.default_rng(0))
        w = {k: (v if k.endswith("b") else np.zeros_like(v)) for k, v in w.items()}
        assert np.all(w["l0.b"][5:10] == 1.0)
        h, [(h2, c)] = forward_cell(cfg, w, np.zeros((2, 1)), zero_state(cfg, 2))
        assert np.all(c.data == 0.0) and np.all(h.data == 0.0)

    def test_rnn_output_range(self):
        cfg = CellConfig(CellKind.RNN, 8, 2, 1)
        w = init_cell_weights(cfg, np.random.default_rng(0))
        h, _ = forward_cell(cfg, w, 100 * np.ones((2, 1)), zero_state(cfg, 2))
        assert np.all(np.abs(h.data) < 1.0)

    def test_shape_checks(self):
        cfg = CellConfig(CellKind.GRU, 4, 1, 2)
        w = init_cell_weights(cfg, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            forward_cell(cfg, w, np.zeros((3, 1)), zero_state(cfg, 3))
        with pytest.raises(ShapeMismatch):
            forward_cell(cfg, w, np.zeros((3, 2)), [])

    @pytest.mark.parametrize("kind", list(CellKind))
    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_gradients(self, kind, layers):
        cfg = CellConfig(kind, 5, layers, 2)
        w = init_cell_weights(cfg, np.random.default_rng(layers))
        # Non-zero biases exercise every path.
        w = {k: v + 0.1 * np.random.default_rng(7).normal(size=v.shape) for k, v in w.items()}
        assert gradcheck(unrolled_loss(cfg), w, n_probe=20, seed=layers) < 1e-4


class TestOptimizer:
    def test_adam_first_step(self):
        p = {"w": ag.parameter(np.array([1.0, -1.0]))}
        opt = Adam(p, lr=0.1)
        p["w"].grad = np.array([0.5, -2.0])
        opt.step()
        # The bias-corrected first step moves each coordinate by lr * sign(grad).
        assert p["w"].data == pytest.approx([0.9, -0.9], abs=1e-6)

    def test_adam_minimizes_quadratic(self):
        p = {"w": ag.parameter(np.array([3.0]))}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            ((p["w"] - 1.0) ** 2).sum().backward()
            opt.step()
        assert p["w"].data[0] == pytest.approx(1.0, abs=1e-3)

    def test_clip(self):
        p = {"a": ag.parameter(np.zeros(2)), "b": ag.parameter(np.zeros(1))}
        p["a"].grad, p["b"].grad = np.array([3.0, 0.0]), np.array([4.0])
        assert clip_grad_norm(p, 1.0) == pytest.approx(5.0)
        norm = np.sqrt(np.sum(p["a"].grad ** 2) + np.sum(p["b"].grad ** 2))
        assert norm == pytest.approx(1.0)

    def test_standardizer_round_trip(self):
        x = np.random.default_rng(0).normal(1e4, 50, 100)
        s = Standardizer.fit(x)
        assert s.inverse(s.transform(x)) == pytest.approx(x, rel=1e-9)
        assert Standardizer.fit(np.full(5, 2.0)).std == 1.0


def sine(n=200):
    return series(np.sin(2 * np.pi * np.arange(n) / 20))


class TestTraining:
    def test_deterministic(self):
        w = make_windows(sine(120), 5, 5)
        cfg, tc = CellConfig(CellKind.GRU, 8), TrainConfig(epochs=3, seed=4)
        a, b = train_point_forecaster(w, cfg, tc), train_point_forecaster(w, cfg, tc)
        assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in a.weights)

    def test_constant_series(self):
        w = make_windows(series(np.full(60, 7.0)), 5, 5)
        model = train_point_forecaster(w, CellConfig(CellKind.LSTM, 8), TrainConfig(epochs=20, seed=0))
        preds = one_step_predictions(model, w)
        assert np.sqrt(np.mean((preds - 7.0) ** 2)) < 1e-3
        path = forecast_recursive(model, np.full(5, 7.0), 10).point
        assert np.allclose(path, path[0]) and abs(path[0] - 7.0) < 1e-3

    def test_horizon_one_equals_one_step(self):
        w = make_windows(sine(80), 5, 5)
        model = train_point_forecaster(w, CellConfig(CellKind.RNN, 6), TrainConfig(epochs=2))
        # Same batch size as the forecast, so the arithmetic is identical.
        single = make_windows(sine(10), 5, 5)
        # Position 5 (the first target) sits at index 4 of the one-step output.
        one = one_step_predictions(model, single)[0, 4]
        assert forecast_recursive(model, single.contexts[0], 1).point[0] == one

    def test_loss_decreases(self):
        w = make_windows(sine(200), 5, 5)
        model = train_point_forecaster(w, CellConfig(CellKind.LSTM, 16), TrainConfig(epochs=30, seed=1))
        assert all(np.isfinite(model.loss_history))
        assert model.loss_history[-1] < 0.3 * model.loss_history[0]

    def test_context_too_short(self):
        model = train_point_forecaster(make_windows(sine(40), 5, 5), CellConfig(CellKind.RNN, 4),
                                       TrainConfig(epochs=1))
        with pytest.raises(ContextTooShort):
            forecast_recursive(model, [1.0, 2.0], 3)

    def test_save_load(self, tmp_path):
        w = make_windows(sine(60), 5, 5)
        model = train_point_forecaster(w, CellConfig(CellKind.GRU, 4, 2), TrainConfig(epochs=2, seed=2**63 + 5))
        back = load_model(save_model(model, tmp_path / "m.npz"))
        assert back.config == model.config and back.train == model.train
        ctx = w.contexts[-1]
        assert np.array_equal(forecast_recursive(back, ctx, 5).point, forecast_recursive(model, ctx, 5).point)
