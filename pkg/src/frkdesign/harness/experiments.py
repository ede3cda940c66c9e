"""Monte Carlo experiments: the sensor factorial, the batch-size study and the OSSE.

Every random quantity is drawn from its own stream keyed by role and cell
(``stream(seed, role, ...)``), so results are reproducible bit for bit and
changing, say, the number of noise repetitions leaves the process
realizations untouched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .. import io
from ..basis import BasisMatrix, eval_basis_matrix, make_multires_basis
from ..design import (DesignConfig, DesignTrace, UtilityConfig, default_candidates,
                      run_adaptive_design, run_random_design)
from ..exceptions import NumericalError
from ..frk import (FitResult, ObservationSet, SREParams, TrendSpec, areal_block, augment,
                   condition, em_fit, point_block)
from ..geometry import (BAUGrid, BlockPartition, Domain, RiskField, bau_indices_of,
                        load_risk_field, make_bau_grid, nest_blocks)
from ..gpsim import (CovarianceSpec, FieldRealization, FieldSampler, NoiseSpec, add_noise,
                     areal_average, simulate_conditional, simulate_unconditional)
from ..metrics import METRICS, ValidationSet, score
from ..rng import stream
from .config import ExperimentConfig

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("realization", "noise_rep", "strategy", "n_x", "snr_x", "b", "metric",
                  "value", "status")
# failures that mark a cell as errored instead of aborting the run
CELL_ERRORS = (NumericalError, np.linalg.LinAlgError, ValueError, FloatingPointError)


def station_layout_clustered(domain: Domain, n_z: int, n_clusters: int, seed,
                             scatter: float = 0.03, margin: float = 0.1) -> np.ndarray:
    """Clustered station coordinates.

    Cluster centers are uniform on the domain shrunk by ``margin`` on every
    side; each cluster holds ``n_z // n_clusters`` stations scattered with SD
    ``scatter * domain.width`` and clipped to the domain.
    """
    if n_clusters < 1 or n_z < 1 or n_z % n_clusters:
        raise ValueError(f"n_z={n_z} is not divisible into {n_clusters} clusters")
    rng = stream(seed, "stations") if isinstance(seed, (int, np.integer)) else seed
    lo = np.array([domain.xmin + margin * domain.width, domain.ymin + margin * domain.height])
    hi = np.array([domain.xmax - margin * domain.width, domain.ymax - margin * domain.height])
    centers = rng.uniform(lo, hi, size=(n_clusters, 2))
    pts = np.repeat(centers, n_z // n_clusters, axis=0)
    pts = pts + rng.normal(scale=scatter * domain.width, size=pts.shape)
    return np.column_stack([np.clip(pts[:, 0], domain.xmin, domain.xmax),
                            np.clip(pts[:, 1], domain.ymin, domain.ymax)])


@dataclass(eq=False)
class Scenario:
    """Everything that stays fixed across realizations."""

    cfg: ExperimentConfig
    grid: BAUGrid
    blocks: BlockPartition
    basis: BasisMatrix
    trend: TrendSpec
    cov: CovarianceSpec
    stations: np.ndarray
    station_bau: np.ndarray
    q_error_var: np.ndarray
    risk: RiskField | None
    proxy_points: tuple | None = None
    sampler: FieldSampler | None = None

    @property
    def n(self) -> int:
        return self.grid.n

    def utility(self) -> UtilityConfig:
        if self.risk is None:
            return UtilityConfig(self.cfg.risk_weight, None)
        return UtilityConfig.from_risk(self.risk)


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    domain = Domain(*cfg.domain)
    nx, ny = cfg.grid
    mask = None
    if cfg.mask_file:
        raster = io.read_bau_field(cfg.mask_file, nx * ny)
        mask = raster > 0.5
    grid = make_bau_grid(domain, nx, ny, mask=mask)
    blocks = nest_blocks(grid, *cfg.proxy_grid)
    basis = make_multires_basis(domain, cfg.n_res, cfg.coarsest_per_axis, max_size=grid.n)
    bm = eval_basis_matrix(basis, grid)
    cov = CovarianceSpec(cfg.sigma2_y, cfg.tau)

    if cfg.station_file:
        stations = io.read_points(cfg.station_file)
    else:
        stations = station_layout_clustered(domain, cfg.n_stations, cfg.n_clusters,
                                            stream(cfg.seed, "stations"), cfg.cluster_sd)
    station_bau = bau_indices_of(grid, stations)

    if cfg.proxy_sd_file:
        sd = io.read_block_sd(cfg.proxy_sd_file)
        missing = [int(lab) for lab in blocks.labels if int(lab) not in sd]
        if missing:
            raise ValueError(f"{cfg.proxy_sd_file}: no SD for block(s) {missing}")
        q_var = np.array([sd[int(lab)] for lab in blocks.labels]) ** 2
    else:
        q_var = np.full(len(blocks), cfg.sigma2_y / cfg.snr_q)

    risk = None
    if cfg.risk_r1_file or cfg.risk_r2_file:
        if not (cfg.risk_r1_file and cfg.risk_r2_file):
            raise ValueError("risk needs both risk_r1_file and risk_r2_file")
        risk = load_risk_field(grid, io.read_bau_field(cfg.risk_r1_file, grid.n),
                               io.read_bau_field(cfg.risk_r2_file, grid.n), cfg.risk_weight)

    proxy_points = None
    sampler = None
    if cfg.proxy_points_file:
        t = io.read_table(cfg.proxy_points_file, ("x", "y", "value"))
        proxy_points = (np.column_stack([t["x"], t["y"]]), t["value"])
    return Scenario(cfg, grid, blocks, bm, TrendSpec.constant(grid.n), cov, stations,
                    station_bau, q_var, risk, proxy_points, sampler)


@dataclass(eq=False)
class Realization:
    index: int
    truth: FieldRealization
    obs: ObservationSet

    @property
    def z(self) -> np.ndarray:
        return self.obs.blocks[0].values

    @property
    def q(self) -> np.ndarray:
        return self.obs.blocks[1].values


def realize(sc: Scenario, m: int) -> Realization:
    """Truth, station data and proxy data for process realization ``m``."""
    cfg = sc.cfg
    seed = stream(cfg.seed, "truth", m)
    if sc.proxy_points is not None:
        truth = simulate_conditional(sc.grid, *sc.proxy_points, sc.cov, seed)
    else:
        if sc.sampler is None:
            sc.sampler = FieldSampler(sc.grid.centroids, sc.cov)
        draw = simulate_unconditional(sc.grid, sc.cov, seed, sc.sampler)
        truth = FieldRealization(draw.values + cfg.process_mean)
    y = truth.values
    z = add_noise(y[sc.station_bau], NoiseSpec(cfg.snr_z), cfg.sigma2_y, stream(cfg.seed, "Z", m))
    q = add_noise(areal_average(y, sc.blocks), NoiseSpec(variances=sc.q_error_var), cfg.sigma2_y,
                  stream(cfg.seed, "Q", m))
    z_var = NoiseSpec(cfg.snr_z).error_variance(z.size, cfg.sigma2_y)
    obs = ObservationSet([point_block("Z", sc.station_bau, z, z_var, sc.n),
                          areal_block(sc.blocks, q, sc.q_error_var)])
    return Realization(m, truth, obs)


def fit_initial(sc: Scenario, rz: Realization) -> FitResult:
    return em_fit(rz.obs, sc.basis, sc.trend, tol=sc.cfg.em_tol, max_iter=sc.cfg.em_max_iter)


def with_sensors(sc: Scenario, obs: ObservationSet, sites, truth, snr_x: float, rng) -> ObservationSet:
    sites = np.asarray(sites, dtype=int)
    err = NoiseSpec(snr_x).error_variance(sites.size, sc.cfg.sigma2_y)
    values = add_noise(truth.values[sites], NoiseSpec(snr_x), sc.cfg.sigma2_y, rng)
    return augment(obs, point_block("X", sites, values, err, sc.n))


def refit(sc: Scenario, obs: ObservationSet, params: SREParams) -> FitResult:
    """Prediction with all data: held covariance parameters and a GLS trend, or a full EM refit."""
    if sc.cfg.final_fit == "em":
        return em_fit(obs, sc.basis, sc.trend, init=params, tol=sc.cfg.em_tol,
                      max_iter=sc.cfg.em_max_iter)
    return condition(obs, sc.basis, sc.trend, params, gls_beta=True)


def validation_indices(n: int, *excluded) -> np.ndarray:
    keep = np.ones(n, dtype=bool)
    for e in excluded:
        keep[np.asarray(e, dtype=int)] = False
    return np.flatnonzero(keep)


def adaptive_sites(sc: Scenario, rz: Realization, params: SREParams, n_x: int, snr_x: float,
                   b: int, seed) -> DesignTrace:
    cfg = sc.cfg
    dcfg = DesignConfig(n_x, b, cfg.min_spacing, cfg.spacing_scope, None, cfg.reestimate,
                        cfg.sigma2_y)
    em_options = {"tol": cfg.em_tol, "max_iter": cfg.em_max_iter}
    return run_adaptive_design(rz.obs, sc.basis, sc.trend, dcfg, sc.utility(), NoiseSpec(snr_x),
                               rz.truth, seed, grid=sc.grid, params=params,
                               em_options=em_options)


def _records(m, rep, strategy, n_x, snr_x, b, values=None, status="ok"):
    return [(m, rep, strategy, n_x, snr_x, b, name,
             np.nan if values is None else values[name], status) for name in METRICS]


def _status(exc: Exception) -> str:
    return f"error: {type(exc).__name__}: {exc}".replace("\n", " ")


def _table(rows) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=list(RESULT_COLUMNS))
    order = {s: i for i, s in enumerate(("adaptive", "random"))}
    df["_s"] = df["strategy"].map(order).fillna(len(order))
    df = df.sort_values(["realization", "noise_rep", "n_x", "snr_x", "b", "_s"], kind="mergesort")
    return df.drop(columns="_s").reset_index(drop=True)


def run_factorial(cfg: ExperimentConfig, progress=None) -> pd.DataFrame:
    """Adaptive vs random sensor placement over realizations, conditions and noise draws.

    Returns the long-format result table (one row per cell and metric).  The
    batch size is fixed at 1.  Validation BAUs are those hosting neither a
    station nor a site of either strategy in the same condition, so the two
    strategies are scored on the same BAUs.
    """
    sc = build_scenario(cfg)
    rows = []
    for m in range(cfg.n_realizations):
        rz = realize(sc, m)
        try:
            params = fit_initial(sc, rz).params
        except CELL_ERRORS as exc:
            log.warning("realization %d: initial fit failed: %s", m, exc)
            for n_x in cfg.n_x_levels:
                for snr_x in cfg.snr_x_levels:
                    for s in cfg.strategies:
                        for rep in range(cfg.n_noise_reps):
                            rows += _records(m, rep, s, n_x, snr_x, 1, status=_status(exc))
            continue
        cand = default_candidates(rz.obs, sc.n)
        for n_x in cfg.n_x_levels:
            random_sites = run_random_design(cand, n_x, stream(cfg.seed, "random_sites", m, n_x))
            for snr_x in cfg.snr_x_levels:
                sites, failed = {}, {}
                if "random" in cfg.strategies:
                    sites["random"] = random_sites
                if "adaptive" in cfg.strategies:
                    try:
                        tr = adaptive_sites(sc, rz, params, n_x, snr_x, 1,
                                            stream(cfg.seed, "design", m, n_x, snr_x))
                        if not tr.complete:
                            raise ValueError(f"only {tr.selected.size} of {n_x} sites feasible")
                        sites["adaptive"] = tr.selected
                    except CELL_ERRORS as exc:
                        failed["adaptive"] = _status(exc)
                val = validation_indices(sc.n, sc.station_bau, *sites.values())
                for rep in range(cfg.n_noise_reps):
                    for s in cfg.strategies:
                        if s in failed:
                            rows += _records(m, rep, s, n_x, snr_x, 1, status=failed[s])
                            continue
                        # common random numbers: both strategies share the noise stream
                        rng = stream(cfg.seed, "X", m, n_x, snr_x, rep)
                        try:
                            obs = with_sensors(sc, rz.obs, sites[s], rz.truth, snr_x, rng)
                            fit = refit(sc, obs, params)
                            rec = score(ValidationSet.from_fit(rz.truth.values, fit.mean,
                                                               fit.var, val))
                            rows += _records(m, rep, s, n_x, snr_x, 1, rec.as_dict())
                        except CELL_ERRORS as exc:
                            rows += _records(m, rep, s, n_x, snr_x, 1, status=_status(exc))
        if progress:
            progress(m + 1, cfg.n_realizations)
    return _table(rows)


def summarize_differences(table: pd.DataFrame) -> pd.DataFrame:
    """Paired (random - adaptive) differences per (n_x, snr_x, metric).

    Pairs are matched on (realization, noise_rep, n_x, snr_x, b, metric).
    Pairs where either side failed are excluded and counted; a record
    without a partner is an error.
    """
    key = ["realization", "noise_rep", "n_x", "snr_x", "b", "metric"]
    t = table[table["strategy"].isin(("adaptive", "random"))]
    wide = t.pivot_table(index=key, columns="strategy", values="value", aggfunc="first",
                         dropna=False)
    ok = t.assign(ok=t["status"] == "ok").pivot_table(index=key, columns="strategy",
                                                      values="ok", aggfunc="first")
    for s in ("adaptive", "random"):
        if s not in ok.columns:
            raise ValueError(f"table has no '{s}' records to pair with")
    missing = ok[ok["adaptive"].isna() | ok["random"].isna()]
    if len(missing):
        cells = [dict(zip(key, k)) for k in missing.index[:10]]
        raise ValueError(f"{len(missing)} unpaired cell(s), e.g. {cells}")
    good = ok["adaptive"].astype(bool) & ok["random"].astype(bool)
    diff = (wide["random"] - wide["adaptive"])[good].rename("d").reset_index()
    bad = (~good).rename("bad").reset_index()
    out = []
    for (n_x, snr_x), g in bad.groupby(["n_x", "snr_x"], sort=True):
        for metric in METRICS:
            d = diff[(diff.n_x == n_x) & (diff.snr_x == snr_x) & (diff.metric == metric)]["d"]
            n_bad = int(g[g.metric == metric]["bad"].sum())
            v = d.to_numpy(dtype=float)
            if v.size:
                q25, q75 = np.quantile(v, [0.25, 0.75])
                mean = float(v.mean())
            else:
                q25 = q75 = mean = np.nan
            out.append((n_x, snr_x, metric, mean, q25, q75, q75 - q25, int(v.size), n_bad))
    return pd.DataFrame(out, columns=["n_x", "snr_x", "metric", "mean", "q25", "q75", "iqr",
                                      "n_pairs", "n_excluded"])


def batch_levels(cfg: ExperimentConfig, n_x: int) -> list[int]:
    levels = {max(1, int(round(f * n_x))) for f in cfg.batch_fractions}
    levels |= {b for b in cfg.batch_sizes if b <= n_x}
    return sorted(levels)


def run_batch_study(cfg: ExperimentConfig, progress=None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Effect of the batch size on the completed design.

    Returns the long-format records (metrics ``mean_pred_var`` and
    ``rmspe``, one per realization) and their per-(n_x, b) averages.  The
    mean prediction variance is averaged over all BAUs; the RMSPE uses BAUs
    hosting no station or sensor.
    """
    sc = build_scenario(cfg)
    snr_x = cfg.batch_snr_x
    rows = []
    for m in range(cfg.n_realizations):
        rz = realize(sc, m)
        try:
            params = fit_initial(sc, rz).params
        except CELL_ERRORS as exc:
            for n_x in cfg.batch_n_x_levels:
                for b in batch_levels(cfg, n_x):
                    for name in ("mean_pred_var", "rmspe"):
                        rows.append((m, 0, "adaptive", n_x, snr_x, b, name, np.nan, _status(exc)))
            continue
        for n_x in cfg.batch_n_x_levels:
            for b in batch_levels(cfg, n_x):
                try:
                    tr = adaptive_sites(sc, rz, params, n_x, snr_x, b,
                                        stream(cfg.seed, "batch", m, n_x, b))
                    if not tr.complete:
                        raise ValueError(f"only {tr.selected.size} of {n_x} sites feasible")
                    fit = tr.final if cfg.final_fit == "fixed" else refit(sc, tr.obs, params)
                    val = validation_indices(sc.n, sc.station_bau, tr.selected)
                    rec = score(ValidationSet.from_fit(rz.truth.values, fit.mean, fit.var, val))
                    vals, status = {"mean_pred_var": float(fit.var.mean()), "rmspe": rec.rmspe}, "ok"
                except CELL_ERRORS as exc:
                    vals, status = {"mean_pred_var": np.nan, "rmspe": np.nan}, _status(exc)
                for name in ("mean_pred_var", "rmspe"):
                    rows.append((m, 0, "adaptive", n_x, snr_x, b, name, vals[name], status))
        if progress:
            progress(m + 1, cfg.n_realizations)
    records = _table(rows)
    good = records[records.status == "ok"]
    summary = (good.pivot_table(index=["n_x", "b", "realization"], columns="metric",
                                values="value")
               .groupby(level=["n_x", "b"]).agg(["mean", "count"]))
    table = pd.DataFrame({
        "n_x": [i[0] for i in summary.index],
        "b": [i[1] for i in summary.index],
        "mean_pred_var": summary[("mean_pred_var", "mean")].to_numpy(),
        "rmspe": summary[("rmspe", "mean")].to_numpy(),
        "n_realizations": summary[("rmspe", "count")].to_numpy(dtype=int),
    })
    return records, table


def summary_stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"Min": v.min(), "Q1": q1, "Median": med, "Mean": v.mean(), "Q3": q3,
            "Max": v.max(), "SD": v.std(ddof=1) if v.size > 1 else 0.0, "N": int(v.size)}


@dataclass(eq=False)
class OSSEReport:
    scenario: Scenario
    realization: Realization
    trace: DesignTrace
    before: FitResult
    after: FitResult
    table1: pd.DataFrame
    table2: pd.DataFrame
    records: pd.DataFrame
    summary: dict


def run_osse(cfg: ExperimentConfig) -> OSSEReport:
    """Single-realization observing-system experiment with a risk-weighted design.

    The adaptive design uses the first entries of ``n_x_levels``,
    ``snr_x_levels`` and ``batch_sizes``.  The sites are then held fixed and
    ``n_noise_reps`` sensor-noise draws give the distribution of each metric
    with sensors, compared with the fit on stations and proxy alone.
    Validation BAUs host neither a station nor a sensor.
    """
    sc = build_scenario(cfg)
    rz = realize(sc, 0)
    before = fit_initial(sc, rz)
    params = before.params
    n_x, snr_x, b = cfg.n_x_levels[0], cfg.snr_x_levels[0], cfg.batch_sizes[0]
    tr = adaptive_sites(sc, rz, params, n_x, snr_x, b, stream(cfg.seed, "design", 0, n_x, snr_x))
    sites = tr.selected
    after = tr.final if cfg.final_fit == "fixed" else refit(sc, tr.obs, params)
    val = validation_indices(sc.n, sc.station_bau, sites)
    y = rz.truth.values

    table1 = pd.DataFrame([{"variable": "process", **summary_stats(y)},
                           {"variable": "stations", **summary_stats(rz.z)},
                           {"variable": "proxy", **summary_stats(rz.q)}])

    no_x = score(ValidationSet.from_fit(y, before.mean, before.var, val)).as_dict()
    rows = []
    for rep in range(cfg.n_noise_reps):
        obs = with_sensors(sc, rz.obs, sites, rz.truth, snr_x, stream(cfg.seed, "X", 0, n_x, snr_x, rep))
        try:
            fit = refit(sc, obs, params)
            rows += _records(0, rep, "adaptive", n_x, snr_x, b,
                             score(ValidationSet.from_fit(y, fit.mean, fit.var, val)).as_dict())
        except CELL_ERRORS as exc:
            rows += _records(0, rep, "adaptive", n_x, snr_x, b, status=_status(exc))
    records = _table(rows)
    good = records[records.status == "ok"]
    t2 = []
    for metric in METRICS:
        v = good[good.metric == metric]["value"].to_numpy(dtype=float)
        qs = np.quantile(v, [0, 0.25, 0.5, 0.75, 1.0]) if v.size else [np.nan] * 5
        t2.append({"metric": metric, "no_x": no_x[metric],
                   **dict(zip(("min", "q25", "median", "q75", "max"), qs)), "n": int(v.size)})
    table2 = pd.DataFrame(t2)

    risk = sc.risk.values if sc.risk is not None else np.zeros(sc.n)
    xy = sc.grid.centroids[sites]
    d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    mae = table2.set_index("metric").loc["mape"]
    summary = {
        "n_bau": sc.n,
        "n_blocks": len(sc.blocks),
        "n_stations": int(sc.stations.shape[0]),
        "n_selected": int(sites.size),
        "design_complete": bool(tr.complete),
        "all_sites_at_risk": bool(np.all(risk[sites] > 0)) if sites.size else False,
        "min_site_distance": float(d.min()) if sites.size > 1 else None,
        "spacing_ok": bool(d.min() >= cfg.min_spacing) if sites.size > 1 else True,
        "sd_at_sites_before": float(before.sd[sites].mean()),
        "sd_at_sites_after": float(after.sd[sites].mean()),
        "sd_reduced_at_sites": bool(after.sd[sites].mean() < before.sd[sites].mean()),
        "mae_no_x": float(mae["no_x"]),
        "mae_max_with_x": float(mae["max"]),
        "mae_improved": bool(mae["max"] < mae["no_x"]),
        "n_excluded": int((records.status != "ok").sum() // len(METRICS)),
        "params": params.to_dict(),
    }
    return OSSEReport(sc, rz, tr, before, after, table1, table2, records, summary)


# --------------------------------------------------------------------------
# writers

def write_results(path, table: pd.DataFrame) -> Path:
    return io.write_csv(path, RESULT_COLUMNS, table[list(RESULT_COLUMNS)].itertuples(index=False))


def write_frame(path, df: pd.DataFrame) -> Path:
    return io.write_csv(path, list(df.columns), df.itertuples(index=False))


def write_grid(path, grid: BAUGrid) -> Path:
    c = grid.centroids
    return io.write_csv(path, ("bau_index", "x", "y"), zip(range(grid.n), c[:, 0], c[:, 1]))


def write_sites(path, trace: DesignTrace, grid: BAUGrid) -> Path:
    return io.write_csv(path, ("x", "y", "bau_index", "step"), trace.site_rows(grid))


def factorial_summary(table: pd.DataFrame) -> dict:
    diffs = summarize_differences(table)
    out = {"n_records": int(len(table)),
           "n_failed_records": int((table.status != "ok").sum()),
           "differences": diffs.to_dict(orient="records")}
    top = max(diffs.n_x)
    at = diffs[diffs.n_x == top].set_index(["snr_x", "metric"])["mean"]
    snrs = sorted(set(diffs[diffs.n_x == top].snr_x))
    out["largest_n_x"] = int(top)
    out["nonnegative_at_largest_n_x"] = {
        m: bool(all(at[(s, m)] >= 0 for s in snrs)) for m in ("rmspe", "mape", "crps")}
    if len(snrs) > 1:
        out["rmspe_gap_grows_with_snr"] = bool(at[(snrs[-1], "rmspe")] > at[(snrs[0], "rmspe")])
    return out


def batch_summary(table: pd.DataFrame) -> dict:
    out = {"table": table.to_dict(orient="records")}
    b1 = table[table.b == 1].sort_values("n_x")["mean_pred_var"].to_numpy()
    if b1.size > 1:
        out["var_decreasing_in_n_x_at_b1"] = bool(np.all(np.diff(b1) < 0))
    at30 = table[table.n_x == 30].set_index("b")["mean_pred_var"]
    if 3 in at30.index and 30 in at30.index:
        out["var_b3_le_b30_at_n_x_30"] = bool(at30[3] <= at30[30])
    return out


def write_osse(out_dir, report: OSSEReport) -> None:
    out = Path(out_dir)
    sc, tr = report.scenario, report.trace
    write_results(out / "results.csv", report.records)
    write_frame(out / "table1.csv", report.table1)
    write_frame(out / "table2.csv", report.table2)
    write_grid(out / "surfaces" / "grid.csv", sc.grid)
    io.write_surface(out / "surfaces" / "before.csv", report.before.mean, report.before.var)
    io.write_surface(out / "surfaces" / "after.csv", report.after.mean, report.after.var)
    # prediction error (truth - mean) alongside the predictive SD
    io.write_surface(out / "surfaces" / "error.csv",
                     report.realization.truth.values - report.after.mean, report.after.var)
    io.write_bau_field(out / "surfaces" / "truth.csv", report.realization.truth.values)
    write_sites(out / "sites.csv", tr, sc.grid)
    io.write_json(out / "design.json", tr.to_dict())
    io.write_json(out / "summary.json", report.summary)
