"""ARIMA / SARIMA / SARIMAX estimated by conditional sum of squares.

The model on the differenced series ``w`` (after ``D`` seasonal and ``d``
ordinary differences) is

    phi(B) Phi(B^m) (w_t - x_t beta) = c + theta(B) Theta(B^m) e_t

with pre-sample values and innovations set to zero. The first
``max(p, P*m)`` residuals are excluded from the sum of squares.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .errors import (
    AllFitsFailed,
    DimensionMismatch,
    ForecastBenchError,
    MissingExog,
    NonInvertibleFit,
    OptimizerDiverged,
    SeriesTooShort,
    SingularRegression,
)
from .forecast import Forecast
from .ingest import Series, adf_test, difference_values, extend_differenced

logger = logging.getLogger(__name__)

MAX_ORDER = 5
MIN_USABLE = 20


@dataclass(frozen=True)
class ArimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    m: int = 1

    def __post_init__(self):
        for name in ("p", "d", "q", "P", "D", "Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"order component {name} must be non-negative")
        for name in ("p", "q", "P", "Q"):
            if getattr(self, name) > MAX_ORDER:
                raise ValueError(f"order component {name} exceeds {MAX_ORDER}")
        if self.m < 1:
            raise ValueError("seasonal period m must be positive")
        if (self.P or self.D or self.Q) and self.m < 2:
            raise ValueError("seasonal terms need a period m >= 2")

    @property
    def is_seasonal(self) -> bool:
        return bool(self.P or self.D or self.Q)

    @property
    def n_conditioned(self) -> int:
        return max(self.p, self.P * self.m)

    @property
    def n_lost(self) -> int:
        return self.d + self.D * self.m

    def __str__(self) -> str:
        base = f"({self.p},{self.d},{self.q})"
        if self.is_seasonal:
            base += f"({self.P},{self.D},{self.Q})[{self.m}]"
        return base


@dataclass(frozen=True)
class ArimaParams:
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("phi", "theta", "Phi", "Theta", "beta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))

    def check(self, order: ArimaOrder, n_exog: int = 0) -> None:
        expected = {"phi": order.p, "theta": order.q, "Phi": order.P, "Theta": order.Q, "beta": n_exog}
        for name, size in expected.items():
            if getattr(self, name).size != size:
                raise DimensionMismatch(f"{name} has {getattr(self, name).size} entries, order needs {size}")

    def ar_polynomial(self, m: int) -> np.ndarray:
        """Coefficients of phi(B) Phi(B^m) in ascending powers of B."""
        return np.convolve(np.r_[1.0, -self.phi], _seasonal_poly(-self.Phi, m))

    def ma_polynomial(self, m: int) -> np.ndarray:
        return np.convolve(np.r_[1.0, self.theta], _seasonal_poly(self.Theta, m))


def _seasonal_poly(coefs: np.ndarray, m: int) -> np.ndarray:
    poly = np.zeros(coefs.size * m + 1)
    poly[0] = 1.0
    poly[m::m] = coefs
    return poly


def _roots_outside_unit_circle(poly: np.ndarray) -> bool:
    poly = np.trim_zeros(poly, "b")
    if poly.size <= 1:
        return True
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-8))


def _as_exog(exog, n_rows: int | None = None) -> np.ndarray | None:
    if exog is None:
        return None
    X = np.asarray(exog, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if n_rows is not None and X.shape[0] != n_rows:
        raise DimensionMismatch(f"exog has {X.shape[0]} rows, expected {n_rows}")
    return X


def _n_cond(order: ArimaOrder, n_condition: int | None) -> int:
    if n_condition is None:
        return order.n_conditioned
    if n_condition < order.n_conditioned:
        raise ValueError(f"order {order} must condition on at least {order.n_conditioned} observations")
    return n_condition


def _innovations(order: ArimaOrder, params: ArimaParams, diffed: np.ndarray, exog: np.ndarray | None) -> np.ndarray:
    v = diffed if exog is None else diffed - exog @ params.beta
    u = lfilter(params.ar_polynomial(order.m), [1.0], v) - params.intercept
    return lfilter([1.0], params.ma_polynomial(order.m), u)


def css_objective(order: ArimaOrder, params: ArimaParams, diffed, exog=None, n_condition: int | None = None) -> float:
    """Conditional sum of squared innovations on an already differenced series.

    ``n_condition`` defaults to ``max(p, P*m)``; it may only be raised.
    """
    diffed = np.asarray(diffed, dtype=np.float64)
    X = _as_exog(exog, diffed.size)
    params.check(order, 0 if X is None else X.shape[1])
    e = _innovations(order, params, diffed, X)[_n_cond(order, n_condition):]
    return float(e @ e)


@dataclass
class FittedClassical:
    order: ArimaOrder
    params: ArimaParams
    aic: float
    bic: float
    sse: float
    residuals: np.ndarray
    training_tail: np.ndarray
    with_intercept: bool
    n_used: int
    invertible: bool = True
    converged: bool = True
    search: list = field(default_factory=list)
    _diffed: np.ndarray = field(default=None, repr=False)
    _innov: np.ndarray = field(default=None, repr=False)
    _exog_diffed: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_exog(self) -> int:
        return self.params.beta.size

    @property
    def n_coefficients(self) -> int:
        o = self.order
        return o.p + o.q + o.P + o.Q + self.n_exog + int(self.with_intercept)

    def residual_summary(self) -> dict:
        std = self.residuals / np.sqrt(self.params.sigma2)
        return {"mean": float(std.mean()), "std": float(std.std(ddof=1)) if std.size > 1 else 0.0}


def _pack_layout(order: ArimaOrder, n_exog: int, with_intercept: bool):
    return [("intercept", int(with_intercept)), ("phi", order.p), ("theta", order.q),
            ("Phi", order.P), ("Theta", order.Q), ("beta", n_exog)]


def _unpack(x: np.ndarray, layout) -> ArimaParams:
    out, pos = {}, 0
    for name, size in layout:
        out[name] = x[pos:pos + size]
        pos += size
    icpt = out.pop("intercept")
    intercept = float(icpt[0]) if icpt.size else 0.0
    return ArimaParams(intercept=intercept, **out)


def fit(series, order: ArimaOrder, exog=None, with_intercept: bool | None = None,
        n_condition: int | None = None) -> FittedClassical:
    """Estimate an ARIMA-family model by minimizing the conditional sum of squares.

    Nelder-Mead starts from zero coefficients (intercept at the mean of the
    differenced series) and is restarted once from its best vertex. An intercept
    is estimated only for undifferenced models unless ``with_intercept`` says
    otherwise. Exogenous columns are regressors for the differenced series,
    row-aligned with the input series. ``n_condition`` raises the number of
    leading residuals left out of the sum of squares, so that fits of
    different orders can be compared on one estimation sample.
    """
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=np.float64)
    X_full = _as_exog(exog, values.size)
    n_cond = _n_cond(order, n_condition)
    if values.size - order.n_lost - n_cond < MIN_USABLE:
        raise SeriesTooShort(f"order {order} leaves fewer than {MIN_USABLE} usable observations")
    w, _ = difference_values(values, order.d, order.D, order.m)
    X = None if X_full is None else X_full[order.n_lost:]
    if with_intercept is None:
        with_intercept = order.d + order.D == 0
    n_exog = 0 if X is None else X.shape[1]
    layout = _pack_layout(order, n_exog, with_intercept)
    dim = sum(size for _, size in layout)

    x0 = np.zeros(dim)
    scale = float(np.std(w)) or 1.0
    steps = np.full(dim, 0.1)
    if with_intercept:
        x0[0] = float(np.mean(w))
        steps[0] = 0.1 * scale
    if n_exog:
        col_scale = np.std(X, axis=0)
        col_scale[col_scale == 0] = 1.0
        steps[-n_exog:] = 0.1 * scale / col_scale

    def objective(x):
        with np.errstate(all="ignore"):
            val = css_objective(order, _unpack(x, layout), w, X, n_cond)
        return val if np.isfinite(val) else np.inf

    converged = True
    if dim:
        f0 = objective(x0)
        norm = f0 if np.isfinite(f0) and f0 > 0 else 1.0

        def scaled(x):
            return objective(x) / norm

        best = x0
        for _ in range(2):
            simplex = np.vstack([best, best + np.diag(steps)])
            res = minimize(
                scaled, best, method="Nelder-Mead",
                options={"initial_simplex": simplex, "fatol": 1e-8, "xatol": 1e-7,
                         "maxiter": 2000 * dim, "maxfev": 4000 * dim},
            )
            best = res.x
            converged = bool(res.success)
            steps = np.maximum(np.abs(steps) * 0.1, 1e-6)
        x_hat = best
    else:
        x_hat = x0

    params = _unpack(x_hat, layout)
    e_full = _innovations(order, params, w, X)
    resid = e_full[n_cond:]
    sse = float(resid @ resid)
    if not np.isfinite(sse):
        raise OptimizerDiverged(f"CSS objective is not finite at the optimum for {order}")
    n_used = resid.size
    sigma2 = sse / n_used
    if sigma2 <= 0:
        raise OptimizerDiverged(f"zero residual variance for {order}")
    params = ArimaParams(params.phi, params.theta, params.Phi, params.Theta, params.beta,
                         params.intercept, sigma2)
    aic = n_used * np.log(sigma2) + 2 * (dim + 1)
    bic = n_used * np.log(sigma2) + np.log(n_used) * (dim + 1)

    invertible = all(_roots_outside_unit_circle(poly) for poly in (
        np.r_[1.0, -params.phi], _seasonal_poly(-params.Phi, order.m),
        np.r_[1.0, params.theta], _seasonal_poly(params.Theta, order.m)))
    if not invertible:
        warnings.warn(f"fitted {order} is non-stationary or non-invertible", NonInvertibleFit, stacklevel=2)

    return FittedClassical(
        order=order, params=params, aic=float(aic), bic=float(bic), sse=sse, residuals=resid,
        training_tail=values.copy(), with_intercept=with_intercept, n_used=n_used,
        invertible=invertible, converged=converged,
        _diffed=w, _innov=e_full, _exog_diffed=X,
    )


def forecast(model: FittedClassical, horizon: int, future_exog=None, timestamps=None) -> Forecast:
    """Iterate the ARMA recursion with zero future innovations, then undo differencing."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if model.n_exog and future_exog is None:
        raise MissingExog(f"model has {model.n_exog} exogenous columns; future_exog required")
    if not model.n_exog and future_exog is not None:
        raise MissingExog("model was fitted without exogenous regressors")
    p = model.params
    Xf = _as_exog(future_exog, horizon)
    if Xf is not None and Xf.shape[1] != model.n_exog:
        raise DimensionMismatch(f"future_exog has {Xf.shape[1]} columns, expected {model.n_exog}")

    ar = -p.ar_polynomial(model.order.m)[1:]
    ma = p.ma_polynomial(model.order.m)[1:]
    v_hist = model._diffed if model._exog_diffed is None else model._diffed - model._exog_diffed @ p.beta
    v = np.concatenate([v_hist, np.zeros(horizon)])
    e = np.concatenate([model._innov, np.zeros(horizon)])
    n = v_hist.size
    for t in range(n, n + horizon):
        acc = p.intercept
        for k, a in enumerate(ar, start=1):
            if t - k >= 0:
                acc += a * v[t - k]
        for k, b in enumerate(ma, start=1):
            if t - k >= 0:
                acc += b * e[t - k]
        v[t] = acc
    w_future = v[n:] if Xf is None else v[n:] + Xf @ p.beta
    o = model.order
    levels = extend_differenced(model.training_tail, w_future, o.d, o.D, o.m)
    return Forecast(point=levels, timestamps=timestamps)


def select_d(values, max_d: int = 2, max_lag: int | None = None) -> int:
    """Smallest d in 0..max_d whose differenced series rejects a unit root at 5%."""
    for d in range(max_d + 1):
        w, _ = difference_values(values, d)
        try:
            if adf_test(w, max_lag=max_lag, rolling_window=None).is_stationary:
                return d
        except SingularRegression:
            # A constant (or exactly linear) differenced series has no unit root.
            return d
    return max_d


@dataclass(frozen=True)
class SeasonalGrid:
    P: tuple = (0, 1)
    D: tuple = (0,)
    Q: tuple = (0, 1)
    m: int = 5


def auto_order(
    series,
    p_grid=(0, 1, 2),
    q_grid=(0, 1, 2),
    seasonal: SeasonalGrid | None = None,
    exog=None,
    d: int | None = None,
    with_intercept: bool | None = None,
    criterion: str = "bic",
    n_condition: int | None = None,
) -> FittedClassical:
    """Fit every order in the grid and keep the one minimizing ``criterion``.

    ``d`` defaults to the ADF-based choice. All candidates are scored on the
    same estimation sample: the first ``n_condition`` residuals (default: the
    largest ``max(p, P*m)`` in the grid) are dropped for every order. Ties go
    to fewer coefficients, then to the lexicographically smallest (p, q, P, Q).
    """
    if not p_grid or not q_grid:
        raise ValueError("order grids must be non-empty")
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion {criterion!r}")
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=np.float64)
    if d is None:
        d = select_d(values)
    seasonal_cells = [(0, 0, 0, 1)] if seasonal is None else [
        (P, D, Q, seasonal.m) for P in seasonal.P for D in seasonal.D for Q in seasonal.Q
    ]
    orders = [
        ArimaOrder(p, d, q, P, D, Q, m if (P or D or Q) else 1)
        for p, q, (P, D, Q, m) in itertools.product(sorted(p_grid), sorted(q_grid), seasonal_cells)
    ]
    if n_condition is None:
        n_condition = max(o.n_conditioned for o in orders)
    best, best_key, search = None, None, []
    for order in orders:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NonInvertibleFit)
                fitted = fit(values, order, exog=exog, with_intercept=with_intercept, n_condition=n_condition)
        except (ForecastBenchError, ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("fit %s failed: %s", order, exc)
            search.append((order, None))
            continue
        score = getattr(fitted, criterion)
        search.append((order, score))
        key = (score, fitted.n_coefficients, (order.p, order.q, order.P, order.Q))
        if best_key is None or key < best_key:
            best, best_key = fitted, key
    if best is None:
        raise AllFitsFailed("no order in the grid could be fitted")
    best.search = search
    if not best.invertible:
        warnings.warn(f"selected {best.order} is non-stationary or non-invertible", NonInvertibleFit, stacklevel=2)
    return best


def simulate_arima(n: int, order_phi=(), order_theta=(), d: int = 0, sigma: float = 1.0,
                   intercept: float = 0.0, seed: int = 0, burn: int = 200,
                   seasonal_theta=(), m: int = 1) -> np.ndarray:
    """Draw an ARIMA path (MA sign convention: y_t = ... + e_t + theta e_{t-1})."""
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, n + burn)
    params = ArimaParams(phi=np.asarray(order_phi, float), theta=np.asarray(order_theta, float),
                         Theta=np.asarray(seasonal_theta, float))
    ar = params.ar_polynomial(m)
    ma = params.ma_polynomial(m)
    w = lfilter(ma, ar, e) + intercept / ar.sum()
    w = w[burn:]
    for _ in range(d):
        w = np.cumsum(w)
    return w
