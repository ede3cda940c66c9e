import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from frkdesign.basis import (APERTURE_FACTOR, BasisSet, bisquare, eval_basis, eval_basis_at,
                             eval_basis_matrix, make_multires_basis)
from frkdesign.geometry import Domain, make_bau_grid

UNIT = Domain.unit_square()


class TestMakeMultires:
    def test_counts(self):
        assert make_multires_basis(UNIT, 1, 3).r == 9
        b = make_multires_basis(UNIT, 2, 3)
        assert b.r == 45
        assert b.counts == [9, 36]
        assert b.n_res == 2

    def test_coarse_lattice(self):
        b = make_multires_basis(UNIT, 2, 3)
        c0 = b.centers[b.resolutions == 0]
        ticks = np.array([1, 3, 5]) / 6
        np.testing.assert_allclose(np.unique(c0[:, 0]), ticks)
        np.testing.assert_allclose(np.unique(c0[:, 1]), ticks)
        np.testing.assert_allclose(c0.mean(axis=0), [0.5, 0.5])
        np.testing.assert_allclose(b.apertures[b.resolutions == 0], APERTURE_FACTOR / 3)
        np.testing.assert_allclose(b.apertures[b.resolutions == 1], APERTURE_FACTOR / 6)

    @pytest.mark.parametrize("n_res,c", [(0, 3), (1, 1)])
    def test_bad_params(self, n_res, c):
        with pytest.raises(ValueError):
            make_multires_basis(UNIT, n_res, c)

    def test_overflow(self):
        with pytest.raises(ValueError):
            make_multires_basis(UNIT, 2, 3, max_size=44)
        assert make_multires_basis(UNIT, 2, 3, max_size=45).r == 45

    @given(st.integers(1, 3), st.integers(2, 5))
    def test_bookkeeping(self, n_res, c):
        b = make_multires_basis(UNIT, n_res, c)
        assert sum(b.counts) == b.r
        assert sum(len(s) for s in b.resolution_slices()) == b.r
        assert b.counts == [(c * 2 ** m) ** 2 for m in range(n_res)]

    def test_json_round_trip(self):
        b = make_multires_basis(Domain(0, 96, 0, 84), 2, 3)
        b2 = BasisSet.from_json(b.to_json())
        np.testing.assert_array_equal(b.centers, b2.centers)
        np.testing.assert_array_equal(b.apertures, b2.apertures)
        assert b.spacings == b2.spacings

    def test_validation(self):
        with pytest.raises(ValueError):
            BasisSet(np.zeros((2, 2)), np.array([1.0, 0.0]), np.array([0, 0]))
        with pytest.raises(ValueError):
            BasisSet(np.zeros((2, 2)), np.ones(2), np.array([0, 2]))


class TestEvaluation:
    def setup_method(self):
        self.b = make_multires_basis(UNIT, 2, 3)

    def test_at_center(self):
        v = eval_basis_at(self.b, self.b.centers[4])
        assert v[4] == 1.0

    def test_compact_support(self):
        a = self.b.apertures[0]
        s = self.b.centers[0] + [a, 0.0]
        assert eval_basis_at(self.b, s)[0] == 0.0

    def test_half_aperture(self):
        assert bisquare(0.5, 1.0) == pytest.approx(0.5625)
        a = self.b.apertures[0]
        assert eval_basis_at(self.b, self.b.centers[0] + [0.0, a / 2])[0] == pytest.approx(0.5625)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(-1e-7, 1e-7), st.floats(-1e-7, 1e-7))
    def test_continuity(self, x, y, ex, ey):
        # bisquare is Lipschitz with constant 16 / (3 sqrt 3 a) < 3.1 / a
        v = eval_basis(self.b, [[x, y], [x + ex, y + ey]])
        bound = 3.1 / self.b.apertures.min() * np.hypot(ex, ey) + 1e-15
        assert np.abs(v[0] - v[1]).max() <= bound


class TestBasisMatrix:
    def setup_method(self):
        self.grid = make_bau_grid(UNIT, 30, 30)
        self.b = make_multires_basis(UNIT, 2, 3)
        self.S = eval_basis_matrix(self.b, self.grid).values

    def test_shape_and_range(self):
        assert self.S.shape == (900, 45)
        assert ((self.S >= 0) & (self.S <= 1)).all()
        assert np.isfinite(self.S).all()

    def test_centroid_at_center(self):
        g = make_bau_grid(UNIT, 6, 6)
        b = make_multires_basis(UNIT, 2, 3)
        S = eval_basis_matrix(b, g).values
        hit = np.flatnonzero(np.all(np.isclose(b.centers[:, None], g.centroids[None]), axis=2).any(1))
        assert hit.size == 36
        for l in hit:
            i = np.flatnonzero(np.all(np.isclose(g.centroids, b.centers[l]), axis=1))[0]
            assert S[i, l] == 1.0

    def test_exact_zero_outside_support(self):
        d = cdist(self.grid.centroids, self.b.centers)
        assert (self.S[d >= self.b.apertures[None]] == 0).all()

    def test_column_sparsity(self):
        # at most ceil(2a/h)^2 non-zeros per column
        h = self.grid.dx
        cap = np.ceil(2 * self.b.apertures / h) ** 2
        assert ((self.S > 0).sum(axis=0) <= cap).all()

    def test_centroid_error_is_second_order(self):
        gaps = []
        for n in (30, 60):
            g = make_bau_grid(UNIT, n, n)
            gaps.append(np.abs(eval_basis_matrix(self.b, g, quadrature=True).values
                               - eval_basis_matrix(self.b, g).values).max())
        assert gaps[0] < 0.01
        assert gaps[0] / gaps[1] > 3.5
