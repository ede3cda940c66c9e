"""Gaussian random field simulation, areal averaging and measurement noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .exceptions import NumericalError
from .geometry import BAUGrid, BlockPartition
from .rng import as_generator

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class CovarianceSpec:
    """Isotropic exponential covariance ``sigma2 * exp(-|h| / tau)``."""

    sigma2: float
    tau: float
    family: str = "exponential"

    def __post_init__(self):
        if self.family != "exponential":
            raise ValueError(f"unsupported covariance family {self.family!r}")
        if not (self.sigma2 > 0 and self.tau > 0):
            raise ValueError("sigma2 and tau must be positive")

    def __call__(self, h):
        return self.sigma2 * np.exp(-np.asarray(h, dtype=float) / self.tau)


@dataclass(frozen=True, eq=False)
class FieldRealization:
    values: np.ndarray
    seed: object = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("field values must be a finite vector")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement-error model: either an SNR or explicit per-entry variances."""

    snr: float | None = None
    variances: tuple | np.ndarray | None = None

    def __post_init__(self):
        if self.variances is None:
            if self.snr is None or not self.snr > 0:
                raise ValueError(f"snr must be positive, got {self.snr}")
        else:
            v = np.asarray(self.variances, dtype=float)
            if (v < 0).any() or not np.all(np.isfinite(v)):
                raise ValueError("noise variances must be finite and non-negative")

    def error_variance(self, n: int, sigma2_y: float) -> np.ndarray:
        if self.variances is not None:
            v = np.asarray(self.variances, dtype=float).ravel()
            if v.size != n:
                raise ValueError(f"{v.size} noise variances for {n} values")
            return v
        return np.full(n, sigma2_y / self.snr)

    @classmethod
    def from_sd(cls, sd) -> "NoiseSpec":
        return cls(variances=np.asarray(sd, dtype=float) ** 2)


def cov_matrix(locs, spec: CovarianceSpec, other=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(locs, dtype=float))
    if a.shape[0] == 0:
        raise ValueError("no locations")
    b = a if other is None else np.atleast_2d(np.asarray(other, dtype=float))
    return spec(cdist(a, b))


def jittered_cholesky(c: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter 1e-10 -> 1e-6 (relative)."""
    scale = float(np.mean(np.diag(c))) if scale is None else scale
    for j in JITTERS:
        try:
            return linalg.cholesky(c + j * scale * np.eye(len(c)), lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError("covariance matrix is not positive definite even with jitter")


class FieldSampler:
    """Zero-mean Gaussian draws at fixed locations via a cached Cholesky factor."""

    def __init__(self, locs, spec: CovarianceSpec):
        self.locs = np.atleast_2d(np.asarray(locs, dtype=float))
        self.spec = spec
        self.factor = jittered_cholesky(cov_matrix(self.locs, spec), spec.sigma2)

    def draw(self, rng) -> np.ndarray:
        rng = as_generator(rng)
        return self.factor @ rng.standard_normal(len(self.locs))


def simulate_unconditional(grid: BAUGrid, spec: CovarianceSpec, seed, sampler=None) -> FieldRealization:
    """One zero-mean draw at the BAU centroids.

    Pass a prebuilt :class:`FieldSampler` to reuse its factorization across
    realizations on the same grid.
    """
    if sampler is None:
        sampler = FieldSampler(grid.centroids, spec)
    elif len(sampler.locs) != grid.n:
        raise ValueError("sampler was built for a different grid")
    return FieldRealization(sampler.draw(seed), seed if isinstance(seed, int) else None)


def areal_average(field, blocks: BlockPartition) -> np.ndarray:
    """Mean of the field over the BAUs in each block."""
    values = field.values if isinstance(field, FieldRealization) else np.asarray(field, float)
    if values.size != blocks.n_bau:
        raise ValueError(f"field has {values.size} values, partition expects {blocks.n_bau}")
    out = np.empty(len(blocks))
    for j, m in enumerate(blocks.members):
        if m.size == 0:
            raise ValueError(f"block {j} is empty")
        out[j] = values[m].mean()
    return out


def ordinary_kriging_weights(data_locs, spec: CovarianceSpec, targets):
    """Weights (n, m) and kriging variances (m,) for ordinary kriging.

    Solves ``[C 1; 1' 0] [w; mu] = [c0; 1]`` for every target column.
    """
    x = np.atleast_2d(np.asarray(data_locs, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise ValueError("ordinary kriging needs at least two data points")
    c = cov_matrix(x, spec)
    c0 = cov_matrix(x, spec, t)
    rhs = np.vstack([c0, np.ones((1, t.shape[0]))])
    for j in JITTERS:
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = c + j * spec.sigma2 * np.eye(n)
        a[:n, n] = a[n, :n] = 1.0
        try:
            lu = linalg.lu_factor(a, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-14 * spec.sigma2:
            continue
        sol = linalg.lu_solve(lu, rhs)
        w, mu = sol[:n], sol[n]
        var = spec.sigma2 - np.einsum("ij,ij->j", w, c0) - mu
        return w, np.maximum(var, 0.0)
    raise NumericalError("ordinary kriging system is singular even with jitter")


def ordinary_kriging(data_locs, data_vals, spec: CovarianceSpec, targets):
    """Ordinary kriging (constant unknown mean) of point data at ``targets``.

    Returns
    -------
    mean, var : ndarray
        Kriging predictor and kriging variance at each target.
    """
    w, var = ordinary_kriging_weights(data_locs, spec, targets)
    z = np.asarray(data_vals, dtype=float).ravel()
    if z.size != w.shape[0]:
        raise ValueError("data_vals length does not match data_locs")
    return w.T @ z, var


def _merge_locations(centroids, data_locs, atol):
    """Positions of data locations inside ``centroids``, appending new ones."""
    d = cdist(data_locs, centroids)
    nearest = d.argmin(axis=1)
    hit = d[np.arange(len(data_locs)), nearest] <= atol
    extra = data_locs[~hit]
    pos = np.where(hit, nearest, 0)
    pos[~hit] = len(centroids) + np.arange(extra.shape[0])
    return np.vstack([centroids, extra]) if extra.size else centroids, pos


def simulate_conditional(grid: BAUGrid, data_locs, data_vals, spec: CovarianceSpec, seed) -> FieldRealization:
    """Conditional draw honouring point data, by kriging-residual correction.

    ``Y_c = Y_u + W'(z - Y_u(data))`` with ``W`` the ordinary kriging weights,
    i.e. kriging mean plus the kriging error of an unconditional draw.
    """
    x = np.atleast_2d(np.asarray(data_locs, dtype=float))
    z = np.asarray(data_vals, dtype=float).ravel()
    if z.size != x.shape[0]:
        raise ValueError("data_vals length does not match data_locs")
    atol = 1e-9 * max(grid.dx, grid.dy)
    locs, pos = _merge_locations(grid.centroids, x, atol)
    u = FieldSampler(locs, spec).draw(seed)
    w, _ = ordinary_kriging_weights(x, spec, grid.centroids)
    values = u[: grid.n] + w.T @ (z - u[pos])
    return FieldRealization(values, seed if isinstance(seed, int) else None)


def add_noise(values, spec: NoiseSpec, sigma2_y: float, seed) -> np.ndarray:
    """Add independent zero-mean Gaussian noise of variance sigma2_y / snr."""
    v = np.asarray(values, dtype=float)
    var = spec.error_variance(v.size, sigma2_y)
    rng = as_generator(seed)
    return v + np.sqrt(var).reshape(v.shape) * rng.standard_normal(v.shape)
