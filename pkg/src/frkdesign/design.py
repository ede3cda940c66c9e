"""Adaptive spatial sampling: utility surface, greedy batch selection, step loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisMatrix
from .frk import (FitResult, ObservationSet, SREParams, TrendSpec, augment, condition,
                  em_fit, point_block)
from .geometry import BAUGrid, RiskField
from .gpsim import FieldRealization, NoiseSpec
from .rng import as_generator

log = logging.getLogger(__name__)

SCOPES = ("batch", "global")
POLICIES = ("once", "every_step")


@dataclass(frozen=True, eq=False)
class UtilityConfig:
    """``U = sqrt(var) + weight * T``; ``risk`` may be None (T = 0)."""

    weight: float = 0.0
    risk: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.weight):
            raise ValueError("utility weight must be finite")
        if self.risk is not None:
            t = np.asarray(self.risk.values if isinstance(self.risk, RiskField) else self.risk, float)
            if (t < 0).any():
                raise ValueError("risk values must be non-negative")
            object.__setattr__(self, "risk", t)

    @classmethod
    def from_risk(cls, risk: RiskField) -> "UtilityConfig":
        return cls(risk.weight, risk.values)


def utility_surface(fit, cfg: UtilityConfig) -> np.ndarray:
    """Per-BAU utility from a fit (or a raw variance vector)."""
    var = fit.var if isinstance(fit, FitResult) else np.asarray(fit, dtype=float)
    if (var < 0).any():
        raise ValueError("prediction variances must be non-negative")
    u = np.sqrt(var)
    if cfg.risk is not None and cfg.weight:
        if cfg.risk.size != u.size:
            raise ValueError(f"risk field has {cfg.risk.size} values for {u.size} BAUs")
        u = u + cfg.weight * cfg.risk
    return u


def select_batch(utility, candidates, b: int, min_spacing: float, grid: BAUGrid,
                 already_selected=(), scope: str = "batch") -> list[int]:
    """Greedy constrained selection of up to ``b`` BAUs.

    Repeatedly takes the feasible candidate of highest utility (lowest BAU
    index on ties).  A candidate is feasible if it is at least
    ``min_spacing`` from every site chosen earlier in this batch and, with
    ``scope="global"``, from every site in ``already_selected``.  Returns
    fewer than ``b`` sites if the constraint rules out the rest.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    cand = np.unique(np.asarray(list(candidates), dtype=int))
    if cand.size == 0:
        raise ValueError("candidate set is empty")
    if b < 1:
        raise ValueError("batch size must be at least 1")
    u = np.asarray(utility, dtype=float)[cand]
    order = cand[np.lexsort((cand, -u))]
    xy = grid.centroids
    fixed = np.asarray(list(already_selected), dtype=int) if scope == "global" else np.zeros(0, int)
    blockers = xy[fixed] if fixed.size else np.zeros((0, 2))
    if min_spacing > 0 and blockers.size:
        d = np.sqrt(((xy[order, None, :] - blockers[None, :, :]) ** 2).sum(-1)).min(axis=1)
        order = order[d >= min_spacing]
    chosen: list[int] = []
    for i in order:
        if len(chosen) == b:
            break
        if min_spacing > 0 and chosen:
            d = np.hypot(*(xy[chosen] - xy[i]).T)
            if (d < min_spacing).any():
                continue
        chosen.append(int(i))
    return chosen


def n_steps(n_x: int, b: int) -> int:
    """Steps after the initial one: ceil(n_x / b - 1)."""
    return (n_x - 1) // b


def batch_sizes(n_x: int, b: int) -> list[int]:
    k = n_steps(n_x, b)
    return [b] * k + [n_x - k * b]


@dataclass(frozen=True)
class DesignConfig:
    n_x: int
    b: int = 1
    min_spacing: float = 0.0
    scope: str = "batch"
    candidates: tuple | None = None
    reestimate: str = "once"
    sigma2_y: float = 1.0

    def __post_init__(self):
        if self.n_x < 1 or not 1 <= self.b <= self.n_x:
            raise ValueError(f"need 1 <= b <= n_x, got b={self.b}, n_x={self.n_x}")
        if self.min_spacing < 0:
            raise ValueError("min_spacing must be non-negative")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if self.reestimate not in POLICIES:
            raise ValueError(f"reestimate must be one of {POLICIES}")

    @property
    def n_k(self) -> int:
        return n_steps(self.n_x, self.b)


@dataclass
class DesignStep:
    k: int
    selected: list
    utility: np.ndarray
    summary: dict


@dataclass
class DesignTrace:
    config: DesignConfig
    steps: list = field(default_factory=list)
    params: SREParams | None = None
    final: FitResult | None = None
    initial: FitResult | None = None
    obs: ObservationSet | None = None
    seed: object = None

    @property
    def batches(self) -> list[list[int]]:
        return [s.selected for s in self.steps]

    @property
    def selected(self) -> np.ndarray:
        return np.array([i for s in self.steps for i in s.selected], dtype=int)

    @property
    def complete(self) -> bool:
        return self.selected.size == self.config.n_x

    def site_rows(self, grid: BAUGrid) -> list[tuple]:
        rows = []
        for s in self.steps:
            for i in s.selected:
                x, y = grid.centroids[i]
                rows.append((float(x), float(y), int(i), s.k))
        return rows

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"n_x": cfg.n_x, "b": cfg.b, "min_spacing": cfg.min_spacing,
                       "scope": cfg.scope, "reestimate": cfg.reestimate, "n_k": cfg.n_k},
            "seed": self.seed if isinstance(self.seed, (int, type(None))) else str(self.seed),
            "params": self.params.to_dict() if self.params else None,
            "complete": self.complete,
            "steps": [{"k": s.k, "selected": [int(i) for i in s.selected], **s.summary}
                      for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_candidates(obs: ObservationSet, n_bau: int) -> np.ndarray:
    """All BAUs except those hosting a regulatory station."""
    mask = np.ones(n_bau, dtype=bool)
    mask[obs.point_bau_indices(("Z",))] = False
    return np.flatnonzero(mask)


def run_adaptive_design(initial_obs: ObservationSet, basis: BasisMatrix, trend: TrendSpec,
                        design_cfg: DesignConfig, utility_cfg: UtilityConfig,
                        sensor_noise: NoiseSpec, truth: FieldRealization, seed, *,
                        grid: BAUGrid, params: SREParams | None = None,
                        em_options: dict | None = None) -> DesignTrace:
    """Adaptive design loop for steps k = 0..n_K.

    At each step the prediction variance given all data so far gives the
    utility surface, a batch is chosen greedily from the remaining
    candidates, sensor data are drawn from ``truth`` plus noise at the new
    BAUs, and the observation set is augmented.

    With ``reestimate="once"`` the parameters come from ``params`` or, if not
    given, from an EM fit to the initial data, and are then held fixed.
    ``"every_step"`` refits by EM after each batch, warm-started.
    """
    em_options = em_options or {}
    rng = as_generator(seed)
    N = grid.n
    cand = np.asarray(design_cfg.candidates if design_cfg.candidates is not None
                      else default_candidates(initial_obs, N), dtype=int)
    z_bau = initial_obs.point_bau_indices(("Z",))
    if np.isin(cand, z_bau).any():
        raise ValueError("candidate set overlaps the regulatory-station BAUs")
    remaining = np.zeros(N, dtype=bool)
    remaining[cand] = True
    err = sensor_noise.error_variance(1, design_cfg.sigma2_y)[0]

    if params is None:
        fit = em_fit(initial_obs, basis, trend, **em_options)
        params = fit.params
    else:
        fit = condition(initial_obs, basis, trend, params)
    trace = DesignTrace(design_cfg, params=params, initial=fit,
                        seed=seed if isinstance(seed, int) else None)
    obs = initial_obs
    selected: list[int] = []
    for k, size in enumerate(batch_sizes(design_cfg.n_x, design_cfg.b)):
        if k > 0:
            if design_cfg.reestimate == "every_step":
                fit = em_fit(obs, basis, trend, init=params, **em_options)
                params = fit.params
            else:
                fit = condition(obs, basis, trend, params)
        u = utility_surface(fit, utility_cfg)
        pool = np.flatnonzero(remaining)
        batch = select_batch(u, pool, size, design_cfg.min_spacing, grid, selected,
                             design_cfg.scope) if pool.size else []
        summary = {"n_selected": len(batch), "max_utility": float(u[pool].max()) if pool.size else None,
                   "mean_var": float(fit.var.mean()), "loglik": float(fit.loglik)}
        trace.steps.append(DesignStep(k, batch, u, summary))
        if not batch:
            log.warning("step %d: no feasible candidate left; design stops at %d sites", k, len(selected))
            break
        if len(batch) < size:
            log.warning("step %d: only %d of %d sites feasible", k, len(batch), size)
        idx = np.asarray(batch)
        values = truth.values[idx] + np.sqrt(err) * rng.standard_normal(idx.size)
        obs = augment(obs, point_block("X", idx, values, err, N))
        remaining[idx] = False
        selected.extend(batch)

    trace.params = params
    trace.obs = obs
    trace.final = condition(obs, basis, trend, params, gls_beta=True)
    return trace


def run_random_design(candidates, n_x: int, seed) -> np.ndarray:
    """Uniform sample of ``n_x`` candidates without replacement."""
    cand = np.asarray(list(candidates), dtype=int)
    if n_x > cand.size:
        raise ValueError(f"cannot draw {n_x} sites from {cand.size} candidates")
    return as_generator(seed).choice(cand, size=n_x, replace=False)
