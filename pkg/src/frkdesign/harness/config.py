"""Experiment configuration: one flat JSON schema shared by every subcommand.

A config file is a JSON object.  The optional key ``"profile"`` picks the
base profile (``desk`` by default); every other key overrides one field of
:class:`ExperimentConfig`.  Unknown keys are rejected.  Relative file paths
are resolved against the config file's directory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

FIELD_DOCS = {
    "domain": "[xmin, xmax, ymin, ymax] of the rectangular domain",
    "grid": "[nx, ny] BAU counts",
    "proxy_grid": "[nx, ny] coarse proxy blocks; must nest the BAU grid",
    "sigma2_y": "process variance (also sets error variances through the SNRs)",
    "tau": "e-folding length of the exponential covariance",
    "process_mean": "constant mean added to unconditional simulations",
    "n_stations": "number of regulatory stations when no station_file is given",
    "n_clusters": "number of station clusters",
    "cluster_sd": "station scatter SD as a fraction of the domain width",
    "station_file": "CSV (x,y) of station coordinates; overrides the clustered layout",
    "snr_z": "signal-to-noise ratio of the station data",
    "snr_q": "signal-to-noise ratio of the proxy data",
    "proxy_sd_file": "CSV (block_index,sd) of per-block proxy error SDs; overrides snr_q",
    "mask_file": "CSV (bau_index,value) over the full raster; 1 marks active BAUs",
    "proxy_points_file": "CSV (x,y,value) of point-referenced proxy output; enables conditional simulation",
    "risk_r1_file": "CSV (bau_index,value) indicator R1 over active BAUs",
    "risk_r2_file": "CSV (bau_index,value) indicator R2 over active BAUs",
    "risk_weight": "lambda, weight of the risk term in the utility",
    "n_x_levels": "sensor counts (factorial levels; the first is used by design/osse)",
    "snr_x_levels": "sensor SNR levels (the first is used by design/osse)",
    "strategies": "subset of ['adaptive', 'random']",
    "batch_sizes": "absolute batch sizes; the first is used by design/osse, all by batch-study",
    "batch_fractions": "batch sizes as fractions of n_x for batch-study",
    "batch_n_x_levels": "sensor counts for batch-study",
    "batch_snr_x": "sensor SNR used in batch-study",
    "min_spacing": "delta_d, minimum distance between new sites",
    "spacing_scope": "'batch' (within a batch) or 'global' (also against earlier sites)",
    "n_realizations": "M1, process realizations",
    "n_noise_reps": "M2, sensor-noise repetitions per design",
    "seed": "master seed",
    "n_res": "basis resolutions",
    "coarsest_per_axis": "basis centers per axis at the coarsest resolution",
    "em_tol": "EM relative log-likelihood tolerance",
    "em_max_iter": "EM iteration cap",
    "reestimate": "'once' (fit on Z,Q then hold fixed) or 'every_step'",
    "final_fit": "'fixed' (held parameters, GLS trend) or 'em' (refit with all data)",
}


@dataclass(frozen=True)
class ExperimentConfig:
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    grid: tuple = (50, 50)
    proxy_grid: tuple = (10, 10)
    sigma2_y: float = 1.0
    tau: float = 0.3
    process_mean: float = 0.0
    n_stations: int = 50
    n_clusters: int = 5
    cluster_sd: float = 0.03
    station_file: str | None = None
    snr_z: float = 9.0
    snr_q: float = 1.0
    proxy_sd_file: str | None = None
    mask_file: str | None = None
    proxy_points_file: str | None = None
    risk_r1_file: str | None = None
    risk_r2_file: str | None = None
    risk_weight: float = 0.0
    n_x_levels: tuple = (10, 70)
    snr_x_levels: tuple = (1.0, 9.0)
    strategies: tuple = ("adaptive", "random")
    batch_sizes: tuple = (1,)
    batch_fractions: tuple = (0.1, 0.5, 1.0)
    batch_n_x_levels: tuple = (10, 30, 50, 70)
    batch_snr_x: float = 9.0
    min_spacing: float = 0.1
    spacing_scope: str = "global"
    n_realizations: int = 20
    n_noise_reps: int = 10
    seed: int = 20190917
    n_res: int = 2
    coarsest_per_axis: int = 3
    em_tol: float = 1e-6
    em_max_iter: int = 200
    reestimate: str = "once"
    final_fit: str = "fixed"

    def __post_init__(self):
        for name in ("domain", "grid", "proxy_grid", "n_x_levels", "snr_x_levels", "strategies",
                     "batch_sizes", "batch_fractions", "batch_n_x_levels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.domain) != 4 or len(self.grid) != 2 or len(self.proxy_grid) != 2:
            raise ValueError("domain needs 4 numbers; grid and proxy_grid need 2")
        counts = ("n_stations", "n_clusters", "n_realizations", "n_noise_reps", "n_res",
                  "em_max_iter")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("n_x_levels", "snr_x_levels", "strategies", "batch_sizes",
                     "batch_n_x_levels"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if min(self.n_x_levels) < 1 or min(self.batch_sizes) < 1:
            raise ValueError("sensor counts and batch sizes must be at least 1")
        if min(self.snr_x_levels) <= 0 or self.snr_z <= 0 or self.snr_q <= 0:
            raise ValueError("signal-to-noise ratios must be positive")
        bad = set(self.strategies) - {"adaptive", "random"}
        if bad:
            raise ValueError(f"unknown strategies {sorted(bad)}")
        if self.spacing_scope not in ("batch", "global"):
            raise ValueError("spacing_scope must be 'batch' or 'global'")
        if self.reestimate not in ("once", "every_step"):
            raise ValueError("reestimate must be 'once' or 'every_step'")
        if self.final_fit not in ("fixed", "em"):
            raise ValueError("final_fit must be 'fixed' or 'em'")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


PATH_FIELDS = ("station_file", "proxy_sd_file", "mask_file", "proxy_points_file",
               "risk_r1_file", "risk_r2_file")
FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def profile_dir() -> Path:
    return Path(str(resources.files("frkdesign") / "data" / "profiles"))


def fixture_dir() -> Path:
    return Path(str(resources.files("frkdesign") / "data" / "osse"))


def profiles() -> list[str]:
    return sorted(p.stem for p in profile_dir().glob("*.json"))


def _apply(base: ExperimentConfig, overrides: dict, root: Path) -> ExperimentConfig:
    unknown = sorted(set(overrides) - FIELD_NAMES)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    resolved = {}
    for k, v in overrides.items():
        if k in PATH_FIELDS and v is not None and not Path(v).is_absolute():
            v = str((root / v).resolve())
        resolved[k] = v
    return replace(base, **resolved)


def load_profile(name: str) -> ExperimentConfig:
    path = profile_dir() / f"{name}.json"
    if not path.exists():
        raise ValueError(f"unknown profile {name!r}; available: {profiles()}")
    data = json.loads(path.read_text())
    data.pop("profile", None)
    return _apply(ExperimentConfig(), data, path.parent)


def load_config(path=None, profile: str | None = None) -> ExperimentConfig:
    """Load a config file on top of a profile (the file's own ``profile`` key wins)."""
    if path is None:
        return load_profile(profile or "desk")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = json.loads(path.read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    base = load_profile(data.pop("profile", None) or profile or "desk")
    return _apply(base, data, path.parent)
