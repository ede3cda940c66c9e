"""Synthetic stand-ins for the two-county observing-system experiment inputs.

Generated once with :func:`generate_osse_fixtures` and shipped under
``frkdesign/data/osse``.  Coordinates are km on a 96 x 84 km rectangle with a
1 km BAU lattice.  The files are:

``mask.csv``          raster cell (bau_index over the full 96x84 raster), value 1 = land
``stations.csv``      7 station coordinates (x, y)
``proxy_points.csv``  proxy output at the centroids of the 12 km blocks (x, y, value)
``proxy_sd.csv``      per-block temporal SD of the proxy (block_index = coarse raster id, sd)
``risk_r1.csv``       high-elderly-share zones indicator per active BAU
``risk_r2.csv``       2 km highway-buffer indicator per active BAU
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .. import io
from ..geometry import Domain, make_bau_grid, nest_blocks
from ..gpsim import CovarianceSpec, FieldSampler
from ..rng import stream

DOMAIN = Domain(0.0, 96.0, 0.0, 84.0)
GRID = (96, 84)
BLOCKS = (8, 7)
CITY = np.array([27.0, 44.0])

# polylines (km) standing in for the major highways
HIGHWAYS = [
    [(27, 44), (45, 50), (66, 56), (95, 60)],
    [(27, 44), (20, 52), (14, 60), (12, 72)],
    [(27, 44), (16, 36), (5, 29)],
    [(27, 44), (50, 44), (80, 38)],
    [(20, 52), (40, 60), (60, 66)],
    [(27, 44), (34, 25), (44, 6)],
]


def land_mask(grid) -> np.ndarray:
    """Two counties: a southern one bounded by a lake shore to the south-west
    and a northern one between a river to the west and a lake to the north."""
    x, y = grid.centroids.T
    south = (y < 50) & (x > 28.0 - 0.8 * y) & (x < 86.0) & ~((x > 50) & (y < 8))
    north = (y >= 50) & (x > 9.0 + 3.0 * np.sin(y / 5.0)) & (x < 64.0) & (y < 80.0 - 0.05 * x)
    return south | north


def _segment_distance(p, a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.hypot(*(p - (a + t[:, None] * ab)).T)


def highway_buffer(xy, width=2.0) -> np.ndarray:
    d = np.full(len(xy), np.inf)
    for line in HIGHWAYS:
        for a, b in zip(line[:-1], line[1:]):
            d = np.minimum(d, _segment_distance(xy, a, b))
    return (d <= width).astype(float)


def elderly_zones(xy, rng, n_units=60, top=0.1) -> np.ndarray:
    """Voronoi 'zip code' units; flag those in the top decile of a synthetic
    elderly share, which is higher near the city."""
    seeds = xy[rng.choice(len(xy), n_units, replace=False)]
    unit = cKDTree(seeds).query(xy)[1]
    d = np.hypot(*(seeds - CITY).T)
    share = np.exp(-d / 25.0) + 0.6 * rng.uniform(size=n_units)
    k = max(1, int(round(top * n_units)))
    flagged = np.argsort(-share)[:k]
    return np.isin(unit, flagged).astype(float)


def _packing(xy, spacing, rng, tries=20) -> int:
    best = len(xy)
    for _ in range(tries):
        chosen = []
        for i in rng.permutation(len(xy)):
            if all(np.hypot(*(xy[i] - xy[j])) >= spacing for j in chosen):
                chosen.append(i)
        best = min(best, len(chosen))
    return best


def generate_osse_fixtures(out_dir, seed: int = 2011) -> dict:
    out = Path(out_dir)
    full = make_bau_grid(DOMAIN, *GRID)
    mask = land_mask(full)
    grid = make_bau_grid(DOMAIN, *GRID, mask=mask)
    blocks = nest_blocks(grid, *BLOCKS)

    rng = stream(seed, "stations")
    stations = CITY + np.array([[0, 0], [-4, 3], [3, -2], [5, 4], [-2, -5], [1, 6]]) \
        + rng.normal(scale=0.7, size=(6, 2))
    stations = np.vstack([stations, [15.5, 60.5]])

    # proxy: smooth urban plume plus a correlated background
    centers = blocks.centers
    spec = CovarianceSpec(0.76, 35.8)
    background = FieldSampler(centers, spec).draw(stream(seed, "proxy"))
    plume = 2.2 * np.exp(-np.hypot(*(centers - CITY).T) ** 2 / (2 * 22.0 ** 2))
    proxy = 5.0 + plume + background
    d_city = np.hypot(*(centers - CITY).T)
    sd = 0.3 + 0.5 * np.exp(-d_city / 30.0) + 0.1 * stream(seed, "proxy_sd").uniform(size=len(blocks))

    xy = grid.centroids
    r2 = highway_buffer(xy)
    for attempt in range(50):
        r1 = elderly_zones(xy, stream(seed, "zones", attempt))
        t = r1 * r2
        if t.sum() >= 60 and _packing(xy[t > 0], 3.0, stream(seed, "pack", attempt)) >= 30:
            break
    else:
        raise RuntimeError("could not build a risk field with room for 20 sensors")

    io.write_csv(out / "mask.csv", ("bau_index", "value"), zip(range(mask.size), mask.astype(int)))
    io.write_points(out / "stations.csv", stations)
    io.write_points(out / "proxy_points.csv", centers, {"value": proxy})
    io.write_csv(out / "proxy_sd.csv", ("block_index", "sd"), zip(blocks.labels, sd))
    io.write_csv(out / "risk_r1.csv", ("bau_index", "value"), zip(range(grid.n), r1.astype(int)))
    io.write_csv(out / "risk_r2.csv", ("bau_index", "value"), zip(range(grid.n), r2.astype(int)))
    return {"n_bau": grid.n, "n_blocks": len(blocks), "n_risk": int(t.sum()), "zones_attempt": attempt}


if __name__ == "__main__":
    import sys

    print(generate_osse_fixtures(sys.argv[1] if len(sys.argv) > 1 else "."))
