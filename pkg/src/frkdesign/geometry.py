"""Rectangular domains, BAU lattices, coarse blocks and risk rasters.

Every BAU-level vector in the package is indexed by *BAU index*: the position
of the cell in row-major order (x varies fastest) among the active cells of
the lattice.  Without a mask this is simply ``row * nx + col``.  With a mask,
inactive cells are skipped and ``BAUGrid.raster_index`` maps back to the full
raster.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import DomainError


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Domain:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate domain {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return (
            (xy[:, 0] >= self.xmin) & (xy[:, 0] <= self.xmax)
            & (xy[:, 1] >= self.ymin) & (xy[:, 1] <= self.ymax)
        )

    @classmethod
    def unit_square(cls) -> "Domain":
        return cls(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class BAUGrid:
    """Regular lattice of equal-area rectangular cells, optionally masked.

    Use :func:`make_bau_grid` rather than constructing directly.
    """

    domain: Domain
    nx: int
    ny: int
    raster_index: np.ndarray          # (N,) raster id of each active BAU
    centroids: np.ndarray             # (N, 2)
    _lookup: np.ndarray = field(repr=False)  # raster id -> BAU index or -1

    @property
    def n(self) -> int:
        return len(self.raster_index)

    @property
    def dx(self) -> float:
        return self.domain.width / self.nx

    @property
    def dy(self) -> float:
        return self.domain.height / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def masked(self) -> bool:
        return self.n < self.nx * self.ny

    @property
    def mask(self) -> np.ndarray:
        """Boolean raster (length nx*ny) of active cells."""
        return self._lookup >= 0

    def raster_to_bau(self, raster_ids) -> np.ndarray:
        return self._lookup[np.asarray(raster_ids, dtype=int)]


def make_bau_grid(domain: Domain, nx: int, ny: int, mask=None) -> BAUGrid:
    """Build an ``nx`` by ``ny`` BAU lattice over ``domain``.

    ``mask`` is an optional boolean raster of length ``nx * ny`` (row-major)
    selecting the active cells; masked-out cells get no BAU index.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got ({nx}, {ny})")
    nx, ny = int(nx), int(ny)
    if mask is None:
        mask = np.ones(nx * ny, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.size != nx * ny:
            raise ValueError(f"mask has {mask.size} entries, expected {nx * ny}")
        if not mask.any():
            raise ValueError("mask selects no cells")
    raster = np.flatnonzero(mask)
    dx = domain.width / nx
    dy = domain.height / ny
    cols = raster % nx
    rows = raster // nx
    centroids = np.column_stack(
        [domain.xmin + (cols + 0.5) * dx, domain.ymin + (rows + 0.5) * dy]
    )
    lookup = np.full(nx * ny, -1, dtype=int)
    lookup[raster] = np.arange(raster.size)
    return BAUGrid(domain, nx, ny, raster, centroids, lookup)


def _axis_cell(t: np.ndarray, n: int) -> np.ndarray:
    # points on an interior edge go to the lower-index cell
    return np.clip(np.ceil(t).astype(int) - 1, 0, n - 1)


def raster_index_of(grid: BAUGrid, xy) -> np.ndarray:
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    inside = grid.domain.contains(xy)
    if not inside.all():
        bad = xy[~inside][0]
        raise DomainError(f"location ({bad[0]}, {bad[1]}) is outside {grid.domain}")
    col = _axis_cell((xy[:, 0] - grid.domain.xmin) / grid.dx, grid.nx)
    row = _axis_cell((xy[:, 1] - grid.domain.ymin) / grid.dy, grid.ny)
    return row * grid.nx + col


def bau_indices_of(grid: BAUGrid, xy) -> np.ndarray:
    """Vectorised :func:`bau_index_of` for an (m, 2) array of locations."""
    idx = grid.raster_to_bau(raster_index_of(grid, xy))
    if (idx < 0).any():
        bad = np.atleast_2d(xy)[idx < 0][0]
        raise DomainError(f"location ({bad[0]}, {bad[1]}) lies in a masked-out cell")
    return idx


def bau_index_of(grid: BAUGrid, s) -> int:
    """Index of the BAU containing ``s``.

    Points on an interior cell edge resolve to the lower-index neighbour.
    Raises :class:`DomainError` outside the domain or inside a masked cell.
    """
    return int(bau_indices_of(grid, [s])[0])


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Coarse blocks, each a set of nested BAU indices.

    ``labels`` holds the row-major id of each block on the coarse raster; with
    a mask, coarse cells containing no active BAU are dropped so labels may
    skip values.
    """

    members: tuple
    labels: np.ndarray
    centers: np.ndarray
    n_bau: int

    def __len__(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members])

    def block_of(self) -> np.ndarray:
        """Block position of every BAU (-1 where a BAU belongs to no block)."""
        out = np.full(self.n_bau, -1, dtype=int)
        for j, m in enumerate(self.members):
            out[m] = j
        return out


def make_partition(members, n_bau: int, labels=None, centers=None) -> BlockPartition:
    """Validate an arbitrary list of BAU index sets as a partition."""
    members = tuple(np.asarray(m, dtype=int) for m in members)
    seen = np.zeros(n_bau, dtype=bool)
    for j, m in enumerate(members):
        if m.size == 0:
            raise ValueError(f"block {j} is empty")
        if m.min() < 0 or m.max() >= n_bau:
            raise ValueError(f"block {j} references BAUs outside 0..{n_bau - 1}")
        if seen[m].any() or np.unique(m).size != m.size:
            raise ValueError(f"block {j} overlaps another block")
        seen[m] = True
    if labels is None:
        labels = np.arange(len(members))
    if centers is None:
        centers = np.full((len(members), 2), np.nan)
    return BlockPartition(members, np.asarray(labels, dtype=int), np.asarray(centers, float), n_bau)


def nest_blocks(grid: BAUGrid, coarse_nx: int, coarse_ny: int) -> BlockPartition:
    """Group BAUs into a coarser ``coarse_nx`` by ``coarse_ny`` lattice.

    The fine lattice must nest exactly in the coarse one.
    """
    if coarse_nx < 1 or coarse_ny < 1:
        raise ValueError("coarse counts must be positive")
    if grid.nx % coarse_nx or grid.ny % coarse_ny:
        raise ValueError(
            f"{grid.nx}x{grid.ny} BAUs do not nest in a {coarse_nx}x{coarse_ny} grid"
        )
    fx, fy = grid.nx // coarse_nx, grid.ny // coarse_ny
    cols = grid.raster_index % grid.nx
    rows = grid.raster_index // grid.nx
    label = (rows // fy) * coarse_nx + cols // fx
    order = np.argsort(label, kind="stable")
    labels, starts = np.unique(label[order], return_index=True)
    members = np.split(order, starts[1:])
    bw, bh = grid.domain.width / coarse_nx, grid.domain.height / coarse_ny
    centers = np.column_stack([
        grid.domain.xmin + (labels % coarse_nx + 0.5) * bw,
        grid.domain.ymin + (labels // coarse_nx + 0.5) * bh,
    ])
    return BlockPartition(tuple(np.sort(m) for m in members), labels, centers, grid.n)


def euclidean_distance(a, b) -> float:
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


@dataclass(frozen=True, eq=False)
class RiskField:
    """Per-BAU risk values T_i and their utility weight lambda."""

    values: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or (v < 0).any():
            raise ValueError("risk values must be a finite non-negative vector")
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError("risk weight must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n: int) -> "RiskField":
        return cls(np.zeros(n), 0.0)


def _indicator(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n:
        raise ValueError(f"{name} has length {v.size}, expected {n}")
    if not np.isin(v, (0.0, 1.0)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return v


def load_risk_field(grid: BAUGrid, r1, r2, weight: float = 1.0) -> RiskField:
    """Risk field T = R1 * R2 from two per-BAU indicator vectors."""
    a = _indicator(r1, grid.n, "r1")
    b = _indicator(r2, grid.n, "r2")
    return RiskField(a * b, weight)
