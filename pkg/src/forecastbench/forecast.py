from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_QUANTILES = (0.1, 0.5, 0.9)


@dataclass
class Forecast:
    """Point path over a horizon, plus sample paths and quantiles for probabilistic models."""

    point: np.ndarray
    samples: np.ndarray | None = None
    quantiles: dict = field(default_factory=dict)
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64)
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=np.float64)
            if self.samples.ndim != 2 or self.samples.shape[1] != self.point.size:
                raise ValueError("samples must have shape (num_samples, horizon)")

    @property
    def horizon(self) -> int:
        return self.point.size

    def quantile(self, q: float) -> np.ndarray:
        if q in self.quantiles:
            return self.quantiles[q]
        if self.samples is None:
            raise ValueError("point forecast carries no distribution")
        return np.quantile(self.samples, q, axis=0)

    @classmethod
    def from_samples(cls, samples: np.ndarray, quantile_levels=DEFAULT_QUANTILES, timestamps=None) -> "Forecast":
        samples = np.asarray(samples, dtype=np.float64)
        # Quantiles read off the per-step sorted draws are monotone in q by construction.
        ordered = np.sort(samples, axis=0)
        qs = {q: np.quantile(ordered, q, axis=0) for q in sorted(quantile_levels)}
        return cls(point=np.median(ordered, axis=0), samples=samples, quantiles=qs, timestamps=timestamps)
