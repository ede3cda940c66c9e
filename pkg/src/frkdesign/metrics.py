"""Prediction accuracy and uncertainty scores over validation BAUs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

METRICS = ("mape", "rmspe", "mpe", "crps")
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


@dataclass(frozen=True, eq=False)
class ValidationSet:
    truth: np.ndarray
    pred: np.ndarray
    sd: np.ndarray
    locations: np.ndarray | None = None

    def __post_init__(self):
        t, p, s = (np.asarray(a, dtype=float).ravel() for a in (self.truth, self.pred, self.sd))
        if not (t.size == p.size == s.size) or t.size < 1:
            raise ValueError("truth, predictions and SDs must be non-empty and of equal length")
        if (s < 0).any():
            raise ValueError("predictive SDs must be non-negative")
        object.__setattr__(self, "truth", t)
        object.__setattr__(self, "pred", p)
        object.__setattr__(self, "sd", s)

    @classmethod
    def from_fit(cls, truth, mean, var, locations) -> "ValidationSet":
        idx = np.asarray(locations, dtype=int)
        return cls(np.asarray(truth)[idx], np.asarray(mean)[idx], np.sqrt(np.asarray(var)[idx]), idx)

    @property
    def errors(self) -> np.ndarray:
        return self.truth - self.pred


@dataclass(frozen=True)
class MetricRecord:
    mape: float
    rmspe: float
    mpe: float
    crps: float

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}

    # summary tables call the same quantity MAE
    @property
    def mae(self) -> float:
        return self.mape


def mape(v: ValidationSet) -> float:
    return float(np.mean(np.abs(v.errors)))


mae = mape


def rmspe(v: ValidationSet) -> float:
    return float(np.sqrt(np.mean(v.errors ** 2)))


def mpe(v: ValidationSet) -> float:
    return float(np.mean(v.errors))


def crps_gaussian(mean, sd, y):
    """Closed-form CRPS of N(mean, sd^2) at observation ``y``.

    Vectorised; ``sd == 0`` gives ``|y - mean|``.
    """
    mean, sd, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, y)))
    if (sd < 0).any():
        raise ValueError("sd must be non-negative")
    scalar = mean.ndim == 0
    out = np.array(np.abs(y - mean), dtype=float, ndmin=1)
    mean, sd, y = (np.atleast_1d(a) for a in (mean, sd, y))
    pos = sd > 0
    if pos.any():
        z = (y[pos] - mean[pos]) / sd[pos]
        out[pos] = sd[pos] * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out[0]) if scalar else out


def score(v: ValidationSet) -> MetricRecord:
    crps = np.asarray(crps_gaussian(v.pred, v.sd, v.truth))
    return MetricRecord(mape(v), rmspe(v), mpe(v), float(np.mean(crps)))
