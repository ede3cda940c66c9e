"""Multi-resolution bisquare basis functions and their BAU evaluations."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import BAUGrid, Domain

APERTURE_FACTOR = 1.5


@dataclass(frozen=True, eq=False)
class BasisSet:
    centers: np.ndarray      # (r, 2)
    apertures: np.ndarray    # (r,)
    resolutions: np.ndarray  # (r,) 0 = coarsest
    spacings: tuple = ()     # center spacing per resolution

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        a = np.asarray(self.apertures, dtype=float).ravel()
        res = np.asarray(self.resolutions, dtype=int).ravel()
        if c.shape[0] < 1 or c.shape[1] != 2:
            raise ValueError("basis needs at least one 2-d center")
        if a.size != c.shape[0] or res.size != c.shape[0]:
            raise ValueError("centers, apertures and resolutions differ in length")
        if (a <= 0).any():
            raise ValueError("apertures must be positive")
        if set(np.unique(res)) != set(range(res.max() + 1)):
            raise ValueError("resolutions must be numbered 0..n_res-1 without gaps")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "apertures", a)
        object.__setattr__(self, "resolutions", res)
        if not self.spacings:
            object.__setattr__(self, "spacings", tuple(
                float(self.apertures[res == m].mean() / APERTURE_FACTOR) for m in range(self.n_res)
            ))

    @property
    def r(self) -> int:
        return self.centers.shape[0]

    @property
    def n_res(self) -> int:
        return int(self.resolutions.max()) + 1

    @property
    def counts(self) -> list[int]:
        return [int((self.resolutions == m).sum()) for m in range(self.n_res)]

    def resolution_slices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.resolutions == m) for m in range(self.n_res)]

    def to_json(self) -> str:
        return json.dumps({
            "centers": self.centers.tolist(),
            "apertures": self.apertures.tolist(),
            "resolutions": self.resolutions.tolist(),
            "spacings": list(self.spacings),
        })

    @classmethod
    def from_json(cls, text: str) -> "BasisSet":
        d = json.loads(text)
        return cls(np.array(d["centers"]), np.array(d["apertures"]),
                   np.array(d["resolutions"]), tuple(d.get("spacings", ())))


def make_multires_basis(domain: Domain, n_res: int, coarsest_per_axis: int,
                        max_size: int | None = None) -> BasisSet:
    """Regular multi-resolution bisquare basis.

    Resolution ``m`` places ``(coarsest_per_axis * 2**m)**2`` centers on a
    regular lattice centred in the domain, with aperture 1.5 times the
    center spacing.  ``max_size`` (typically the number of BAUs) caps r.
    """
    if n_res < 1 or coarsest_per_axis < 2:
        raise ValueError("need n_res >= 1 and coarsest_per_axis >= 2")
    r = sum((coarsest_per_axis * 2 ** m) ** 2 for m in range(n_res))
    if max_size is not None and r > max_size:
        raise ValueError(f"{r} basis functions exceed the limit of {max_size}")
    centers, apertures, res, spacings = [], [], [], []
    for m in range(n_res):
        k = coarsest_per_axis * 2 ** m
        hx, hy = domain.width / k, domain.height / k
        xs = domain.xmin + (np.arange(k) + 0.5) * hx
        ys = domain.ymin + (np.arange(k) + 0.5) * hy
        gx, gy = np.meshgrid(xs, ys)
        centers.append(np.column_stack([gx.ravel(), gy.ravel()]))
        spacing = max(hx, hy)
        apertures.append(np.full(k * k, APERTURE_FACTOR * spacing))
        res.append(np.full(k * k, m))
        spacings.append(spacing)
    return BasisSet(np.vstack(centers), np.concatenate(apertures), np.concatenate(res), tuple(spacings))


def bisquare(d, a):
    u = np.asarray(d, dtype=float) / a
    return np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)


def eval_basis(basis: BasisSet, xy) -> np.ndarray:
    """(m, r) matrix of basis values at an (m, 2) array of locations."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    return bisquare(cdist(xy, basis.centers), basis.apertures[None, :])


def eval_basis_at(basis: BasisSet, s) -> np.ndarray:
    return eval_basis(basis, [s])[0]


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """N x r matrix S with ``S[i, l]`` = phi_l averaged over BAU i."""

    values: np.ndarray
    basis: BasisSet

    @property
    def shape(self):
        return self.values.shape


_GAUSS2 = 0.5 / np.sqrt(3.0)


def eval_basis_matrix(basis: BasisSet, grid: BAUGrid, quadrature: bool = False) -> BasisMatrix:
    """Evaluate the basis over the BAUs.

    By default each BAU average is approximated by the value at the centroid.
    ``quadrature=True`` uses a 2x2 Gauss-Legendre rule inside each cell instead.
    """
    if not quadrature:
        return BasisMatrix(eval_basis(basis, grid.centroids), basis)
    acc = np.zeros((grid.n, basis.r))
    for ox in (-_GAUSS2, _GAUSS2):
        for oy in (-_GAUSS2, _GAUSS2):
            pts = grid.centroids + np.array([ox * grid.dx, oy * grid.dy])
            acc += eval_basis(basis, pts)
    return BasisMatrix(acc / 4.0, basis)
