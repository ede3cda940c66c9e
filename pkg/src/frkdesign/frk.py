"""Spatial random effects model over BAUs: change of support, EM, prediction.

The BAU process is ``Y = X beta + S eta + xi`` with ``eta ~ N(0, K)`` (r
basis coefficients) and ``xi ~ N(0, sigma2_xi I)`` (fine scale).  Data of any
support are ``Z~ = H Y + eps`` with known, diagonal ``var(eps)``.

Marginalising xi gives ``var(Z~) = A K A' + D`` with ``A = H S`` and the
n x n matrix ``D = sigma2_xi H H' + diag(var eps)``.  Every solve goes through
``D`` (n = number of observations, small) and an r x r capacity matrix, so the
N-dimensional BAU vectors only appear in products with sparse ``H`` and the
N x r basis matrix.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.spatial.distance import cdist

from .basis import BasisMatrix, BasisSet
from .exceptions import NumericalError
from .geometry import BAUGrid, BlockPartition, bau_indices_of
from .gpsim import jittered_cholesky

log = logging.getLogger(__name__)

POINT_KINDS = ("Z", "X")
KIND_ORDER = {"Z": 0, "Q": 1, "X": 2}
LOG2PI = np.log(2.0 * np.pi)


# --------------------------------------------------------------------------
# observations

@dataclass(frozen=True, eq=False)
class ObservationBlock:
    """One data source: values, incidence rows over BAUs, error variances.

    ``kind`` is ``"Z"`` (regulatory stations), ``"Q"`` (gridded proxy) or
    ``"X"`` (portable sensors).
    """

    kind: str
    values: np.ndarray
    incidence: sparse.csr_matrix
    error_var: np.ndarray

    def __post_init__(self):
        if self.kind not in KIND_ORDER:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float).ravel()
        e = np.broadcast_to(np.asarray(self.error_var, dtype=float), v.shape).copy()
        h = sparse.csr_matrix(self.incidence, dtype=float)
        if h.shape[0] != v.size:
            raise ValueError(f"incidence has {h.shape[0]} rows for {v.size} values")
        if (e <= 0).any() or not np.all(np.isfinite(e)):
            raise ValueError("error variances must be positive and finite")
        if h.nnz and (h.data < 0).any():
            raise ValueError("incidence entries must be non-negative")
        if v.size:
            sums = np.asarray(h.sum(axis=1)).ravel()
            if np.abs(sums - 1.0).max() > 1e-12:
                raise ValueError("incidence rows must sum to 1")
            if self.kind in POINT_KINDS:
                if (np.diff(h.indptr) != 1).any() or (h.data != 1.0).any():
                    raise ValueError("point-kind rows need exactly one entry equal to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "error_var", e)
        object.__setattr__(self, "incidence", h)

    def __len__(self):
        return self.values.size

    @property
    def n_bau(self) -> int:
        return self.incidence.shape[1]

    def with_values(self, values) -> "ObservationBlock":
        return replace(self, values=np.asarray(values, dtype=float))


def build_point_incidence(grid: BAUGrid, locs) -> sparse.csr_matrix:
    """Rows with a single 1 in the column of the BAU containing each location."""
    locs = np.asarray(locs, dtype=float).reshape(-1, 2)
    cols = bau_indices_of(grid, locs) if len(locs) else np.zeros(0, dtype=int)
    return point_incidence_from_indices(cols, grid.n)


def point_incidence_from_indices(bau_idx, n_bau: int) -> sparse.csr_matrix:
    cols = np.asarray(bau_idx, dtype=int).ravel()
    m = cols.size
    return sparse.csr_matrix((np.ones(m), cols, np.arange(m + 1)), shape=(m, n_bau))


def build_areal_incidence(blocks: BlockPartition, n_bau: int) -> sparse.csr_matrix:
    """Rows averaging the BAUs nested in each block (entries 1/|block|)."""
    rows, cols, vals = [], [], []
    for j, m in enumerate(blocks.members):
        if len(m) == 0:
            raise ValueError(f"block {j} is empty")
        rows.append(np.full(len(m), j))
        cols.append(np.asarray(m))
        vals.append(np.full(len(m), 1.0 / len(m)))
    if not rows:
        return sparse.csr_matrix((0, n_bau))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(blocks.members), n_bau),
    )


def point_block(kind: str, bau_idx, values, error_var, n_bau: int) -> ObservationBlock:
    return ObservationBlock(kind, values, point_incidence_from_indices(bau_idx, n_bau), error_var)


def areal_block(blocks: BlockPartition, values, error_var) -> ObservationBlock:
    return ObservationBlock("Q", values, build_areal_incidence(blocks, blocks.n_bau), error_var)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Stacked data ``(Z', Q', X_1', ..., X_k')'`` with matching incidence rows."""

    blocks: tuple = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if blocks:
            n_bau = {b.n_bau for b in blocks}
            if len(n_bau) != 1:
                raise ValueError("blocks disagree on the number of BAUs")
            order = [KIND_ORDER[b.kind] for b in blocks]
            if order != sorted(order):
                raise ValueError("blocks must be stacked Z, then Q, then X batches")
        object.__setattr__(self, "blocks", blocks)

    def __len__(self):
        return sum(len(b) for b in self.blocks)

    @property
    def n_bau(self) -> int:
        return self.blocks[0].n_bau

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([b.values for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def error_var(self) -> np.ndarray:
        return np.concatenate([b.error_var for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def H(self) -> sparse.csr_matrix:
        return sparse.vstack([b.incidence for b in self.blocks], format="csr")

    def point_bau_indices(self, kinds=POINT_KINDS) -> np.ndarray:
        """BAUs hosting at least one point observation of the given kinds."""
        idx = [b.incidence.indices for b in self.blocks if b.kind in kinds and len(b)]
        return np.unique(np.concatenate(idx)) if idx else np.zeros(0, dtype=int)

    def augment(self, block: ObservationBlock) -> "ObservationSet":
        return augment(self, block)

    def with_values(self, values) -> "ObservationSet":
        values = np.asarray(values, dtype=float)
        out, i = [], 0
        for b in self.blocks:
            out.append(b.with_values(values[i:i + len(b)]))
            i += len(b)
        if i != values.size:
            raise ValueError(f"{values.size} values for {i} observations")
        return ObservationSet(tuple(out))


def augment(obs: ObservationSet, new_block: ObservationBlock) -> ObservationSet:
    """Append a portable-sensor batch; an empty batch leaves the set unchanged."""
    if new_block.kind != "X":
        raise ValueError(f"only portable-sensor (X) blocks can be appended, got {new_block.kind!r}")
    if len(new_block) == 0:
        return obs
    return ObservationSet(obs.blocks + (new_block,))


# --------------------------------------------------------------------------
# parameters

@dataclass(frozen=True, eq=False)
class TrendSpec:
    covariates: np.ndarray  # (N, p)

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if np.linalg.matrix_rank(x) < x.shape[1]:
            raise ValueError("trend covariates must have full column rank")
        object.__setattr__(self, "covariates", x)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @classmethod
    def constant(cls, n_bau: int) -> "TrendSpec":
        return cls(np.ones((n_bau, 1)))


@dataclass(frozen=True)
class KParams:
    """Per-resolution (variance, e-folding length) of the block-exponential K."""

    variances: tuple
    lengths: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in np.atleast_1d(self.variances))
        ell = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if len(v) != len(ell):
            raise ValueError("variances and lengths differ in length")
        if min(v) <= 0 or min(ell) <= 0:
            raise ValueError("K variances and lengths must be positive")
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "lengths", ell)

    def matrix(self, basis: BasisSet) -> np.ndarray:
        if len(self.variances) != basis.n_res:
            raise ValueError(f"{len(self.variances)} K blocks for {basis.n_res} resolutions")
        k = np.zeros((basis.r, basis.r))
        for m, idx in enumerate(basis.resolution_slices()):
            c = basis.centers[idx]
            k[np.ix_(idx, idx)] = self.variances[m] * np.exp(-cdist(c, c) / self.lengths[m])
        return k


@dataclass(frozen=True)
class SREParams:
    beta: tuple
    k: KParams
    sigma2_xi: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        if not self.sigma2_xi >= 0:
            raise ValueError("sigma2_xi must be non-negative")

    def to_dict(self) -> dict:
        return {"beta": list(self.beta), "k_variances": list(self.k.variances),
                "k_lengths": list(self.k.lengths), "sigma2_xi": self.sigma2_xi}

    @classmethod
    def from_dict(cls, d: dict) -> "SREParams":
        return cls(tuple(d["beta"]), KParams(tuple(d["k_variances"]), tuple(d["k_lengths"])),
                   float(d["sigma2_xi"]))


@dataclass(frozen=True, eq=False)
class FitResult:
    params: SREParams
    eta_mean: np.ndarray
    eta_cov: np.ndarray
    mean: np.ndarray      # per-BAU E(Y_i | data)
    var: np.ndarray       # per-BAU var(Y_i | data)
    loglik: float
    loglik_trace: tuple = ()
    n_iter: int = 0
    converged: bool = True
    init: SREParams | None = None

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.var)

    def to_json(self) -> str:
        return json.dumps({
            "params": self.params.to_dict(),
            "init": self.init.to_dict() if self.init else None,
            "loglik": self.loglik,
            "loglik_trace": list(self.loglik_trace),
            "n_iter": self.n_iter,
            "converged": self.converged,
        }, indent=2)


# --------------------------------------------------------------------------
# linear algebra core

def _chol_logdet(c) -> float:
    return 2.0 * float(np.log(np.diag(c[0] if isinstance(c, tuple) else c)).sum())


@dataclass
class _Conditioning:
    """Everything derived from (observations, basis, covariance params)."""

    obs: ObservationSet
    S: np.ndarray
    X: np.ndarray
    basis: BasisSet
    k: KParams
    sigma2_xi: float
    H: sparse.csr_matrix = field(init=False)
    A: np.ndarray = field(init=False)
    XH: np.ndarray = field(init=False)

    def __post_init__(self):
        self.H = self.obs.H
        self.A = np.asarray(self.H @ self.S)
        self.XH = np.asarray(self.H @ self.X)
        n = self.A.shape[0]
        d = np.diag(self.obs.error_var)
        if self.sigma2_xi > 0:
            d = d + self.sigma2_xi * (self.H @ self.H.T).toarray()
        try:
            self.cD = linalg.cho_factor(d, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("observation error covariance is singular") from exc
        self.Dinv = linalg.cho_solve(self.cD, np.eye(n)) if n else np.zeros((0, 0))
        K = self.k.matrix(self.basis)
        self.L = jittered_cholesky(K, max(self.k.variances))
        self.DinvA = self.Dinv @ self.A
        AL = self.A @ self.L
        M = np.eye(self.L.shape[0]) + AL.T @ (self.DinvA @ self.L)
        self.cM = linalg.cho_factor(M, lower=True)
        # posterior covariance of eta
        Linv_t = linalg.cho_solve(self.cM, self.L.T)
        self.P = self.L @ Linv_t
        self.P = 0.5 * (self.P + self.P.T)
        self.logdet = _chol_logdet(self.cD) + _chol_logdet(self.cM)

    def sigma_inv(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} v by Woodbury."""
        dv = self.Dinv @ v
        return dv - self.DinvA @ (self.P @ (self.A.T @ dv))

    def gls_beta(self) -> np.ndarray:
        z = self.obs.values
        lhs = self.XH.T @ self.sigma_inv(self.XH)
        return np.linalg.solve(lhs, self.XH.T @ self.sigma_inv(z))

    def residual(self, beta) -> np.ndarray:
        return self.obs.values - self.XH @ np.asarray(beta)

    def eta_mean(self, r) -> np.ndarray:
        return self.P @ (self.DinvA.T @ r)

    def loglik(self, r) -> float:
        n = r.size
        dr = self.Dinv @ r
        b = self.L.T @ (self.A.T @ dr)
        quad = r @ dr - b @ linalg.cho_solve(self.cM, b)
        return -0.5 * (n * LOG2PI + self.logdet + quad)

    def bau_moments(self, beta, r):
        """Per-BAU posterior mean and variance."""
        s2 = self.sigma2_xi
        mu = self.eta_mean(r)
        HT = self.H.T.tocsr()
        G = self.S
        if s2 > 0:
            G = self.S - s2 * np.asarray(HT @ self.DinvA)
        var = np.einsum("ij,ij->i", G @ self.P, G) + s2
        mean = self.X @ np.asarray(beta) + G @ mu
        if s2 > 0:
            W = np.asarray(HT @ self.Dinv)
            var -= s2 * s2 * np.asarray(HT.multiply(W).sum(axis=1)).ravel()
            mean += s2 * (W @ r)
        return mean, np.maximum(var, 0.0), mu


def _prior_only(S, X, basis, params: SREParams):
    K = params.k.matrix(basis)
    var = np.einsum("ij,jk,ik->i", S, K, S) + params.sigma2_xi
    mean = X @ np.asarray(params.beta)
    return mean, var, np.zeros(basis.r), K


def _check(obs: ObservationSet, bm: BasisMatrix, trend: TrendSpec, params: SREParams | None = None):
    N = bm.values.shape[0]
    if len(obs) and obs.n_bau != N:
        raise ValueError(f"observations reference {obs.n_bau} BAUs, basis has {N}")
    if trend.covariates.shape[0] != N:
        raise ValueError("trend covariates do not match the number of BAUs")
    if params is not None and len(params.beta) != trend.p:
        raise ValueError(f"{len(params.beta)} trend coefficients for {trend.p} covariates")


def log_likelihood(obs: ObservationSet, basis: BasisMatrix, trend: TrendSpec, params: SREParams) -> float:
    """Gaussian marginal log-likelihood of the stacked data."""
    _check(obs, basis, trend, params)
    if len(obs) == 0:
        return 0.0
    c = _Conditioning(obs, basis.values, trend.covariates, basis.basis, params.k, params.sigma2_xi)
    return c.loglik(c.residual(params.beta))


def condition(obs: ObservationSet, basis: BasisMatrix, trend: TrendSpec, params: SREParams,
              gls_beta: bool = False) -> FitResult:
    """Gaussian conditioning at fixed parameters (no estimation).

    With ``gls_beta`` the trend coefficients are replaced by their GLS
    estimate given the data and the fixed covariance parameters.
    """
    _check(obs, basis, trend, params)
    if len(obs) == 0:
        mean, var, mu, K = _prior_only(basis.values, trend.covariates, basis.basis, params)
        return FitResult(params, mu, K, mean, var, 0.0)
    c = _Conditioning(obs, basis.values, trend.covariates, basis.basis, params.k, params.sigma2_xi)
    if gls_beta:
        params = replace(params, beta=tuple(c.gls_beta()))
    r = c.residual(params.beta)
    mean, var, mu = c.bau_moments(params.beta, r)
    ll = c.loglik(r)
    return FitResult(params, mu, c.P, mean, var, ll, (ll,))


def default_init(obs: ObservationSet, basis: BasisMatrix, trend: TrendSpec) -> SREParams:
    """Starting values: OLS trend, K variances at the sample variance of Z
    (all data if there is no Z block), lengths at 1.5x center spacing, and
    sigma2_xi at a tenth of the sample variance."""
    z = obs.values
    XH = np.asarray(obs.H @ trend.covariates)
    beta = np.linalg.lstsq(XH, z, rcond=None)[0]
    zz = np.concatenate([b.values for b in obs.blocks if b.kind == "Z"] or [z])
    s2 = float(np.var(zz)) if zz.size > 1 else float(np.var(z))
    if not s2 > 0:
        s2 = float(np.var(z)) if np.var(z) > 0 else 1.0
    bs = basis.basis
    k = KParams(tuple([s2] * bs.n_res), tuple(1.5 * h for h in bs.spacings))
    return SREParams(tuple(beta), k, 0.1 * s2)


ESTIMABLE = ("beta", "K", "sigma2_xi")


def _update_sigma2(c: _Conditioning, W: np.ndarray, current: float, floor: float, upper: float) -> float:
    # Maximise -1/2 [log|D(s)| + tr(D(s)^{-1} W)], D(s) = s HH' + V, via the
    # generalised eigen-decomposition of (HH', V).
    v = c.obs.error_var
    vi = 1.0 / np.sqrt(v)
    HHt = (c.H @ c.H.T).toarray()
    lam, U = np.linalg.eigh(vi[:, None] * HHt * vi[None, :])
    lam = np.maximum(lam, 0.0)
    T = U.T * vi[None, :]
    w = np.einsum("ij,jk,ik->i", T, W, T)

    def f(log_s):
        s = np.exp(log_s)
        return float(np.sum(np.log1p(s * lam)) + np.sum(w / (1.0 + s * lam)))

    lo, hi = np.log(floor), np.log(upper)
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-8})
    cand = float(np.exp(res.x))
    cur = min(max(current, floor), upper)
    return cand if f(np.log(cand)) < f(np.log(cur)) else cur


def _update_k(basis: BasisSet, M: np.ndarray, k: KParams, diameter: float) -> KParams:
    variances, lengths = [], []
    for m, idx in enumerate(basis.resolution_slices()):
        Mm = M[np.ix_(idx, idx)]
        rm = idx.size
        dist = cdist(basis.centers[idx], basis.centers[idx])

        def full(v, ell):
            R = np.exp(-dist / ell)
            try:
                cR = linalg.cho_factor(R, lower=True)
            except linalg.LinAlgError:
                return np.inf, np.nan
            trace = float(np.trace(linalg.cho_solve(cR, Mm)))
            if v is None:
                v = trace / rm
            return rm * np.log(v) + _chol_logdet(cR) + trace / v, v

        def profile(log_ell):
            return full(None, np.exp(log_ell))[0]

        old, _ = full(k.variances[m], k.lengths[m])
        if rm == 1:
            v_new, ell_new = float(Mm[0, 0]), k.lengths[m]
        else:
            lo = np.log(basis.spacings[m] * 0.05)
            hi = np.log(diameter * 20.0)
            res = optimize.minimize_scalar(profile, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-6})
            ell_new = float(np.exp(res.x))
            v_new = full(None, ell_new)[1]
        new, _ = full(v_new, ell_new)
        if np.isfinite(new) and new < old:
            variances.append(float(v_new))
            lengths.append(ell_new)
        else:
            variances.append(k.variances[m])
            lengths.append(k.lengths[m])
    return KParams(tuple(variances), tuple(lengths))


def em_fit(obs: ObservationSet, basis: BasisMatrix, trend: TrendSpec, init: SREParams | None = None,
           tol: float = 1e-6, max_iter: int = 200, estimate=ESTIMABLE) -> FitResult:
    """Maximum likelihood fit of (beta, K, sigma2_xi) by EM, then prediction.

    The basis coefficients eta are the missing data.  Each M-step updates, in
    turn, sigma2_xi (one-dimensional search), beta (GLS given the new error
    covariance) and the per-resolution K parameters (profile search over the
    length with the variance in closed form).  Each conditional update is
    only accepted if it does not lower the expected complete-data
    log-likelihood, so the observed log-likelihood never decreases.

    Measurement-error variances are taken as known.  Iteration stops when
    the relative change in log-likelihood falls below ``tol``; if
    ``max_iter`` is reached first the result is flagged ``converged=False``.
    """
    _check(obs, basis, trend, init)
    estimate = set(estimate)
    unknown = estimate - set(ESTIMABLE)
    if unknown:
        raise ValueError(f"cannot estimate {sorted(unknown)}")
    n = len(obs)
    if n < trend.p + 1:
        raise ValueError(f"{n} observations are too few to fit {trend.p} trend terms")
    z = obs.values
    if not np.all(np.isfinite(z)):
        raise ValueError("observations contain non-finite values")
    init = init or default_init(obs, basis, trend)
    params = init
    s2y = float(np.var(z)) if np.var(z) > 0 else 1.0
    floor = 1e-10 * s2y
    upper = 100.0 * s2y + 100.0 * float(obs.error_var.max())
    if "sigma2_xi" in estimate and params.sigma2_xi < floor:
        params = replace(params, sigma2_xi=floor)
    dom = basis.basis.centers
    diameter = float(np.hypot(*(dom.max(axis=0) - dom.min(axis=0)))) or max(basis.basis.spacings)
    S, X, bs = basis.values, trend.covariates, basis.basis

    trace = []
    converged = False
    it = 0
    while True:
        c = _Conditioning(obs, S, X, bs, params.k, params.sigma2_xi)
        r = c.residual(params.beta)
        ll = c.loglik(r)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-2]), 1.0):
            converged = True
            break
        if it >= max_iter or not estimate:
            converged = converged or not estimate
            break
        it += 1
        mu = c.eta_mean(r)
        e = r - c.A @ mu
        sigma2 = params.sigma2_xi
        if "sigma2_xi" in estimate:
            W = np.outer(e, e) + c.A @ c.P @ c.A.T
            sigma2 = _update_sigma2(c, W, sigma2, floor, upper)
        beta = np.asarray(params.beta)
        if "beta" in estimate:
            cd = c if sigma2 == params.sigma2_xi else _Conditioning(obs, S, X, bs, params.k, sigma2)
            target = z - c.A @ mu
            beta = np.linalg.solve(cd.XH.T @ cd.Dinv @ cd.XH, cd.XH.T @ cd.Dinv @ target)
        k = params.k
        if "K" in estimate:
            k = _update_k(bs, c.P + np.outer(mu, mu), k, diameter)
        params = SREParams(tuple(beta), k, sigma2)

    if not converged:
        log.warning("EM stopped at max_iter=%d before reaching tol=%g", max_iter, tol)
    mean, var, mu = c.bau_moments(params.beta, r)
    return FitResult(params, mu, c.P, mean, var, trace[-1], tuple(trace), it, converged, init)


def predict(fit: FitResult, grid: BAUGrid | None = None):
    """Per-BAU posterior mean and variance; ``var(Y(s)|.)`` is that of the BAU containing s."""
    if grid is not None and grid.n != fit.mean.size:
        raise ValueError(f"fit has {fit.mean.size} BAUs, grid has {grid.n}")
    return fit.mean.copy(), fit.var.copy()
