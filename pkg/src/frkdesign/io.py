"""CSV/JSON readers and writers for the fixed file contracts.

Points are ``x,y`` tables; per-BAU fields are ``bau_index,value``; per-block
standard deviations are ``block_index,sd``; prediction surfaces are
``bau_index,mean,sd``.  Numbers are written with 12 significant digits.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.12g}"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path, required) -> dict[str, np.ndarray]:
    """Read a headed CSV, checking that ``required`` columns are present."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}; found {cols}")
        rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in cols}


def read_points(path) -> np.ndarray:
    t = read_table(path, ("x", "y"))
    return np.column_stack([t["x"], t["y"]])


def _indexed(path, key: str, col: str, n: int | None):
    t = read_table(path, (key, col))
    idx = t[key].astype(int)
    if np.any(idx != t[key]) or np.unique(idx).size != idx.size:
        raise ValueError(f"{path}: {key} must be distinct integers")
    if n is not None and (idx.min(initial=0) < 0 or idx.max(initial=-1) >= n):
        raise ValueError(f"{path}: {key} out of range 0..{n - 1}")
    return idx, t[col]


def read_bau_field(path, n: int, default: float | None = None) -> np.ndarray:
    """Per-BAU vector of length ``n``; every index must be present unless ``default`` is given."""
    idx, val = _indexed(path, "bau_index", "value", n)
    out = np.full(n, np.nan if default is None else default)
    out[idx] = val
    if default is None and idx.size != n:
        raise ValueError(f"{path}: {n - idx.size} BAU indices missing")
    return out


def write_bau_field(path, values) -> Path:
    v = np.asarray(values)
    return write_csv(path, ("bau_index", "value"), zip(range(v.size), v))


def write_block_field(path, values, labels=None) -> Path:
    v = np.asarray(values)
    labels = range(v.size) if labels is None else labels
    return write_csv(path, ("block_index", "value"), zip(labels, v))


def read_block_sd(path) -> dict[int, float]:
    idx, sd = _indexed(path, "block_index", "sd", None)
    if (sd < 0).any():
        raise ValueError(f"{path}: negative standard deviation")
    return dict(zip(idx.tolist(), sd.tolist()))


def write_surface(path, mean, var) -> Path:
    mean = np.asarray(mean)
    sd = np.sqrt(np.maximum(np.asarray(var), 0.0))
    return write_csv(path, ("bau_index", "mean", "sd"), zip(range(mean.size), mean, sd))


def write_points(path, xy, extra: dict | None = None) -> Path:
    xy = np.asarray(xy).reshape(-1, 2)
    extra = extra or {}
    header = ("x", "y", *extra)
    cols = [xy[:, 0], xy[:, 1], *(np.asarray(v) for v in extra.values())]
    return write_csv(path, header, zip(*cols))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(FLOAT_FMT.format(float(o)))
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _round(o):
    if isinstance(o, float):
        return float(FLOAT_FMT.format(o)) if np.isfinite(o) else None
    if isinstance(o, dict):
        return {k: _round(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_round(v) for v in o]
    return o


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_round(obj), indent=2, default=_json_default) + "\n")
    return path
