"""Seeded synthetic series used as test oracles and bundled datasets."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .classical import simulate_arima
from .ingest import Series

START_DATE = "2011-01-03"
KINDS = ("arima", "ar1", "ma1", "sine", "randomwalk", "whitenoise", "index")
DEFAULT_LENGTHS = {"arima": 1000, "ar1": 2000, "ma1": 2000, "sine": 600,
                   "randomwalk": 500, "whitenoise": 500, "index": 2500}

BUNDLED = {
    "index": ("synthetic_index.csv", 2011),
    "sine": ("sine.csv", 20),
    "arima": ("arima011.csv", 12),
}


def business_days(n: int, start: str = START_DATE) -> np.ndarray:
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")


def generate(kind: str, n: int | None = None, seed: int = 0) -> Series:
    """Generate one of the synthetic series.

    arima: ARIMA(0,1,1), theta 0.6, level 1000. ar1: phi 0.7. ma1: theta 0.6.
    sine: 10 + sin(2 pi t / 20). randomwalk: Gaussian steps from 1000.
    whitenoise: N(0, 1). index: random walk with drift shaped like a daily
    equity index (start 6000, drift 4 points, step sd 60).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    n = n or DEFAULT_LENGTHS[kind]
    rng = np.random.default_rng(seed)
    if kind == "arima":
        values = 1000.0 + simulate_arima(n, order_theta=[0.6], d=1, seed=seed)
    elif kind == "ar1":
        values = simulate_arima(n, order_phi=[0.7], seed=seed)
    elif kind == "ma1":
        values = simulate_arima(n, order_theta=[0.6], seed=seed)
    elif kind == "sine":
        values = 10.0 + np.sin(2.0 * np.pi * np.arange(n) / 20.0)
    elif kind == "randomwalk":
        values = 1000.0 + np.cumsum(rng.standard_normal(n))
    elif kind == "whitenoise":
        values = rng.standard_normal(n)
    else:
        values = 6000.0 + np.cumsum(4.0 + 60.0 * rng.standard_normal(n))
    return Series(business_days(n), values, "Close")


def bundled_path(kind: str):
    """Path of a dataset shipped with the package."""
    filename, _ = BUNDLED[kind]
    return resources.files("forecastbench") / "data" / filename
