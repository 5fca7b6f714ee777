import numpy as np
import pytest
from scipy import stats

from forecastbench import autograd as ag
from forecastbench.ingest import Series, make_windows
from forecastbench.neural import TrainConfig, load_model, save_model
from forecastbench.probabilistic import (
    SIGMA_FLOOR,
    DeepArConfig,
    DeepFactorConfig,
    Likelihood,
    _init_deepar,
    _init_deepfactor,
    day_of_week,
    deepar_forecast,
    deepar_loss,
    deepar_one_step,
    deepar_train,
    deepfactor_components,
    deepfactor_forecast,
    deepfactor_loss,
    deepfactor_train,
    gaussian_nll,
    mean_scale,
    student_t_nll,
    time_features,
)
from forecastbench.simulate import business_days

from gradutil import gradcheck


def series(values):
    return Series(business_days(len(values)), np.asarray(values, dtype=float), "Close")


SMALL_AR = DeepArConfig(num_layers=1, hidden=8, num_samples=50)


class TestLikelihoods:
    def test_gaussian_matches_scipy(self):
        y, mu, sigma = np.array([[0.3, -1.2]]), np.array([[0.1, 0.5]]), np.array([[0.7, 2.0]])
        got = gaussian_nll(y, ag.Tensor(mu), ag.Tensor(sigma)).data
        assert got == pytest.approx(-stats.norm.logpdf(y, mu, sigma))

    def test_student_t_matches_scipy(self):
        y, mu, sigma, df = 0.8, 0.1, 1.5, 4.5
        got = student_t_nll(np.array([[y]]), ag.Tensor([[mu]]), ag.Tensor([[sigma]]), ag.Tensor([[df]])).item()
        assert got == pytest.approx(-stats.t.logpdf(y, df, mu, sigma))

    def test_mean_scale(self):
        assert mean_scale(np.full(5, 4.0)) == 5.0
        assert mean_scale(np.array([-2.0, 2.0])) == 3.0

    def test_day_of_week(self):
        dow = day_of_week(np.array(["2011-01-03", "2011-01-09"], dtype="datetime64[D]"))
        assert dow[0].argmax() == 0 and dow[1].argmax() == 6


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("likelihood", list(Likelihood))
    def test_deepar_loss(self, seed, likelihood):
        cfg = DeepArConfig(num_layers=1 + seed, hidden=4, likelihood=likelihood)
        rng = np.random.default_rng(seed)
        w = _init_deepar(cfg, rng)
        inputs = rng.normal(size=(3, 5, cfg.input_size))
        targets = rng.normal(size=(3, 5))
        assert gradcheck(lambda p: deepar_loss(cfg, p, inputs, targets), w, seed=seed) < 1e-4

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_deepfactor_loss(self, seed):
        cfg = DeepFactorConfig(global_layers=1, global_hidden=6, local_layers=1 + seed, local_hidden=3, num_factors=3)
        rng = np.random.default_rng(seed)
        w = _init_deepfactor(cfg, rng)
        w["loadings"] = rng.normal(size=w["loadings"].shape)
        feats = rng.normal(size=(2, 6, 8))
        targets = rng.normal(size=(2, 6))
        assert gradcheck(lambda p: deepfactor_loss(cfg, p, feats, targets), w, seed=seed) < 1e-4


class TestDeepAr:
    def test_deterministic(self):
        w = make_windows(series(np.random.default_rng(0).normal(5, 1, 80)), 5, 5)
        tc = TrainConfig(epochs=2, seed=3)
        a, b = deepar_train(w, SMALL_AR, tc), deepar_train(w, SMALL_AR, tc)
        assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in a.weights)
        fa = deepar_forecast(a, w.contexts[0], 4, seed=1)
        fb = deepar_forecast(b, w.contexts[0], 4, seed=1)
        assert fa.samples.tobytes() == fb.samples.tobytes()

    def test_gaussian_moment_recovery(self):
        y = np.random.default_rng(1).normal(5.0, 1.0, 1200)
        train = series(y[:1000])
        model = deepar_train(make_windows(train, 5, 5), DeepArConfig(num_layers=1, hidden=8, calendar=False,
                                                                     learning_rate=1e-2),
                             TrainConfig(epochs=15, batch_size=64, seed=0))
        held = y[1000:]
        mus, sigmas = zip(*(deepar_one_step(model, held[i:i + 5]) for i in range(0, 190, 5)))
        assert np.mean(mus) == pytest.approx(5.0, abs=0.2)
        assert np.mean(sigmas) == pytest.approx(1.0, abs=0.2)

    def test_constant_series_scaling(self):
        c = 4.0
        w = make_windows(series(np.full(60, c)), 5, 5)
        assert mean_scale(w.contexts[0]) == 1.0 + c
        short = deepar_train(w, SMALL_AR, TrainConfig(epochs=100, seed=0))
        model = deepar_train(w, SMALL_AR, TrainConfig(epochs=300, seed=0))
        mu, sigma = deepar_one_step(model, np.full(5, c))
        assert mu == pytest.approx(c, rel=0.01)
        # sigma keeps shrinking towards its floor as training continues.
        assert sigma < deepar_one_step(short, np.full(5, c))[1]
        assert sigma < 0.02 * c

    def test_scale_equivariance_on_constant(self):
        tc = TrainConfig(epochs=300, seed=0)
        paths = []
        for c in (3.0, 300.0):
            model = deepar_train(make_windows(series(np.full(60, c)), 5, 5), SMALL_AR, tc)
            paths.append(deepar_forecast(model, np.full(5, c), 5, seed=0).point / c)
        assert paths[1] == pytest.approx(paths[0], rel=0.05)

    def test_sigma_floor_collapses_band(self):
        w = make_windows(series(np.random.default_rng(0).normal(5, 1, 60)), 5, 5)
        model = deepar_train(w, SMALL_AR, TrainConfig(epochs=1))
        model.weights["head.W"][:, 1] = 0.0
        model.weights["head.b"][1] = -1e3
        fc = deepar_forecast(model, w.contexts[0], 6, num_samples=100, seed=0)
        assert np.max(np.abs(fc.samples - fc.samples.mean(axis=0))) < 1e-3
        assert np.max(fc.quantile(0.9) - fc.quantile(0.1)) < 1e-3

    def test_two_samples_monotone(self):
        w = make_windows(series(np.random.default_rng(0).normal(5, 1, 60)), 5, 5)
        model = deepar_train(w, SMALL_AR, TrainConfig(epochs=1))
        fc = deepar_forecast(model, w.contexts[0], 5, num_samples=2, seed=0)
        assert np.all(fc.quantile(0.1) <= fc.quantile(0.5))
        assert np.all(fc.quantile(0.5) <= fc.quantile(0.9))

    def test_student_t_trains(self):
        w = make_windows(series(np.random.default_rng(0).standard_t(3, 100) + 10), 5, 5)
        cfg = DeepArConfig(num_layers=1, hidden=6, likelihood="student_t", num_samples=20)
        model = deepar_train(w, cfg, TrainConfig(epochs=2))
        assert np.all(np.isfinite(deepar_forecast(model, w.contexts[0], 3).samples))

    def test_save_load(self, tmp_path):
        w = make_windows(series(np.random.default_rng(0).normal(5, 1, 40)), 5, 5)
        model = deepar_train(w, SMALL_AR, TrainConfig(epochs=1))
        back = load_model(save_model(model, tmp_path / "ar.npz"))
        assert back.config == model.config
        a = deepar_forecast(model, w.contexts[0], 3, seed=9).samples
        assert np.array_equal(deepar_forecast(back, w.contexts[0], 3, seed=9).samples, a)


class TestDeepFactor:
    def test_zero_loadings_predict_zero(self):
        cfg = DeepFactorConfig(global_hidden=5, local_layers=1, num_factors=2)
        params = {k: ag.Tensor(v) for k, v in _init_deepfactor(cfg, np.random.default_rng(0)).items()}
        feats = time_features(np.arange(6)[None], business_days(6)[None], 6)
        fixed, scale = deepfactor_components(cfg, params, feats)
        assert all(f.data[0, 0] == 0.0 for f in fixed)
        assert all(s.data[0, 0] >= SIGMA_FLOOR for s in scale)

    def test_trend_tracking(self):
        n = 200
        y = np.arange(n, dtype=float) + np.random.default_rng(0).normal(0, 1e-3, n)
        train = series(y[:180])
        cfg = DeepFactorConfig(global_hidden=16, local_layers=1, local_hidden=3, num_factors=3)
        model = deepfactor_train(make_windows(train, 5, 5), cfg, TrainConfig(epochs=60, learning_rate=1e-2, seed=0))
        fc = deepfactor_forecast(model, 20, num_samples=50, timestamps=business_days(n)[180:])
        rmse = np.sqrt(np.mean((fc.point - y[180:]) ** 2))
        assert rmse < 0.05 * np.ptp(y)

    def test_single_factor_constant(self):
        cfg = DeepFactorConfig(global_hidden=4, local_layers=1, local_hidden=2, num_factors=1)
        model = deepfactor_train(make_windows(series(np.full(50, 3.0)), 5, 5), cfg, TrainConfig(epochs=20))
        fc = deepfactor_forecast(model, 5, num_samples=20)
        assert fc.point == pytest.approx(3.0, abs=1e-6)

    def test_zero_noise_samples_equal_point(self):
        cfg = DeepFactorConfig(global_hidden=4, local_layers=1, local_hidden=2, num_factors=2)
        rng = np.random.default_rng(0)
        model = deepfactor_train(make_windows(series(rng.normal(size=50)), 5, 5), cfg, TrainConfig(epochs=1))
        model.weights["n.head.W"][:] = 0.0
        model.weights["n.head.b"][:] = -1e3
        fc = deepfactor_forecast(model, 5, num_samples=30)
        assert np.max(np.abs(fc.samples - fc.point)) < 1e-5

    def test_save_load(self, tmp_path):
        cfg = DeepFactorConfig(global_hidden=4, local_layers=1, local_hidden=2, num_factors=2)
        model = deepfactor_train(make_windows(series(np.arange(40.0)), 5, 5), cfg, TrainConfig(epochs=1))
        back = load_model(save_model(model, tmp_path / "df.npz"))
        assert np.array_equal(deepfactor_forecast(back, 4, seed=2).samples, deepfactor_forecast(model, 4, seed=2).samples)
