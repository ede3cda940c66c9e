import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal, norm

from frkdesign.basis import eval_basis_matrix, make_multires_basis
from frkdesign.frk import (KParams, ObservationSet, SREParams, TrendSpec, areal_block, augment,
                           build_areal_incidence, build_point_incidence, condition, default_init,
                           em_fit, log_likelihood, point_block, predict)
from frkdesign.exceptions import DomainError
from frkdesign.geometry import Domain, make_bau_grid, make_partition, nest_blocks

from conftest import (dense_loglik, dense_posterior, exp_cov, frk_prior, identity_basis,
                      random_problem)

UNIT = Domain.unit_square()


class TestIncidence:
    def test_bau_seven(self):
        g = make_bau_grid(UNIT, 3, 3)
        loc = g.centroids[7] + [0.05, -0.1]
        row = build_point_incidence(g, [loc]).toarray()[0]
        assert row.tolist() == [0, 0, 0, 0, 0, 0, 0, 1, 0]

    def test_same_bau_rows_identical(self):
        g = make_bau_grid(UNIT, 3, 3)
        h = build_point_incidence(g, [[0.1, 0.1], [0.2, 0.3]]).toarray()
        np.testing.assert_array_equal(h[0], h[1])

    def test_point_outside(self):
        with pytest.raises(DomainError):
            build_point_incidence(make_bau_grid(UNIT, 3, 3), [[1.5, 0.5]])

    def test_areal_block_of_100(self):
        g = make_bau_grid(UNIT, 100, 100)
        h = build_areal_incidence(nest_blocks(g, 10, 10), g.n)
        assert h.shape == (100, 10_000)
        row = h.getrow(0)
        assert row.nnz == 100
        np.testing.assert_allclose(row.data, 0.01)

    def test_singleton_equals_point(self):
        g = make_bau_grid(UNIT, 3, 3)
        a = build_areal_incidence(make_partition([[4], [0, 1, 2, 3, 5, 6, 7, 8]], 9), 9)
        np.testing.assert_array_equal(a.toarray()[0], build_point_incidence(g, [[0.5, 0.5]]).toarray()[0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_rows_sum_to_one(self, seed):
        r = np.random.default_rng(seed)
        lab = r.integers(0, 5, 40)
        groups = [np.flatnonzero(lab == j) for j in np.unique(lab)]
        h = build_areal_incidence(make_partition(groups, 40), 40)
        np.testing.assert_allclose(np.asarray(h.sum(axis=1)).ravel(), 1.0, atol=1e-12)

    def test_empty_block(self):
        p = nest_blocks(make_bau_grid(UNIT, 2, 2), 2, 2)
        object.__setattr__(p, "members", [np.array([0, 1, 2, 3]), np.array([], dtype=int)])
        with pytest.raises(ValueError):
            build_areal_incidence(p, 4)


class TestObservationSet:
    def test_stacking_order(self):
        z = point_block("Z", [0], [1.0], 0.1, 4)
        x = point_block("X", [1], [1.0], 0.1, 4)
        with pytest.raises(ValueError):
            ObservationSet((x, z))

    def test_augment(self):
        z = ObservationSet((point_block("Z", [0, 2], [1.0, 2.0], 0.1, 4),))
        assert augment(z, point_block("X", [], [], 0.1, 4)) is z
        a = augment(z, point_block("X", [1, 3], [0.5, 0.7], 0.2, 4))
        assert len(a) == len(z) + 2
        np.testing.assert_array_equal(a.values[:2], z.values)
        with pytest.raises(ValueError):
            augment(z, point_block("Z", [1], [0.5], 0.2, 4))

    def test_bad_blocks(self):
        with pytest.raises(ValueError):
            point_block("Z", [0], [1.0], 0.0, 4)
        with pytest.raises(ValueError):
            point_block("W", [0], [1.0], 0.1, 4)


class TestLogLikelihood:
    def setup_method(self):
        self.grid = make_bau_grid(UNIT, 1, 1)
        self.bm = identity_basis(self.grid)
        self.trend = TrendSpec.constant(1)

    def test_scalar_closed_form(self):
        p = SREParams((0.3,), KParams((0.8,), (1.0,)), 0.15)
        obs = ObservationSet((point_block("Z", [0], [1.1], 0.05, 1),))
        expect = norm(0.3, np.sqrt(0.8 + 0.15 + 0.05)).logpdf(1.1)
        assert log_likelihood(obs, self.bm, self.trend, p) == pytest.approx(expect, abs=1e-12)

    @pytest.mark.parametrize("scale", [1.0, 2.0])
    def test_two_observations_hand_assembled(self, scale):
        # two readings of the same BAU: cov = (v + s2) 11' + e I
        v, s2, e = 0.8, 0.15, 0.05 * scale
        p = SREParams((0.3,), KParams((v,), (1.0,)), s2)
        z = np.array([1.1, 0.4])
        obs = ObservationSet((point_block("Z", [0, 0], z, e, 1),))
        c = np.full((2, 2), v + s2) + e * np.eye(2)
        det = (v + s2 + e) ** 2 - (v + s2) ** 2
        r = z - 0.3
        quad = r @ np.linalg.inv(c) @ r
        expect = -np.log(2 * np.pi) - 0.5 * np.log(det) - 0.5 * quad
        got = log_likelihood(obs, self.bm, self.trend, p)
        assert got == pytest.approx(expect, abs=1e-12)
        assert got == pytest.approx(multivariate_normal([0.3, 0.3], c).logpdf(z), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_dense(self, seed):
        grid, obs, bm, trend, p = random_problem(np.random.default_rng(seed), n_res=2)
        mean, cov = frk_prior(bm, trend, p)
        expect = dense_loglik(mean, cov, obs.H, obs.error_var, obs.values)
        assert log_likelihood(obs, bm, trend, p) == pytest.approx(expect, rel=1e-9, abs=1e-9)

    def test_reordering(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, with_proxy=False, n_points=7)
        zb = obs.blocks[0]
        perm = rng.permutation(len(zb))
        shuffled = ObservationSet((point_block("Z", zb.incidence.indices[perm], zb.values[perm],
                                               zb.error_var[perm], grid.n),))
        assert log_likelihood(shuffled, bm, trend, p) == pytest.approx(
            log_likelihood(obs, bm, trend, p), abs=1e-10)

    def test_empty(self, rng):
        grid, obs, bm, trend, p = random_problem(rng)
        assert log_likelihood(ObservationSet(()), bm, trend, p) == 0.0


class TestCondition:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.booleans())
    def test_matches_dense_posterior(self, seed, proxy):
        grid, obs, bm, trend, p = random_problem(np.random.default_rng(seed), with_proxy=proxy, n_res=2)
        mean, cov = frk_prior(bm, trend, p)
        m, v = dense_posterior(mean, cov, obs.H, obs.error_var, obs.values)
        fit = condition(obs, bm, trend, p)
        np.testing.assert_allclose(fit.mean, m, atol=1e-9)
        np.testing.assert_allclose(fit.var, v, atol=1e-9)

    def test_full_rank_matches_kriging(self, rng):
        # S = I, no fine scale, K an exponential GP covariance on 16 BAUs
        grid = make_bau_grid(UNIT, 4, 4)
        bm = identity_basis(grid)
        p = SREParams((0.5,), KParams((1.3,), (0.4,)), 0.0)
        idx = np.array([0, 5, 6, 11, 15])
        z = rng.normal(size=5)
        e = np.full(5, 0.02)
        obs = ObservationSet((point_block("Z", idx, z, e, grid.n),))
        C = exp_cov(grid.centroids, 1.3, 0.4)
        w = np.linalg.solve(C[np.ix_(idx, idx)] + np.diag(e), C[idx])
        mean = 0.5 + w.T @ (z - 0.5)
        var = np.diag(C) - np.einsum("ij,ij->j", C[idx], w)
        fit = condition(obs, bm, TrendSpec.constant(grid.n), p)
        np.testing.assert_allclose(fit.mean, mean, atol=1e-6)
        np.testing.assert_allclose(fit.var, var, atol=1e-6)

    def test_prior_recovery(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, n_res=2)
        fit = condition(ObservationSet(()), bm, trend, p)
        S, K = bm.values, p.k.matrix(bm.basis)
        np.testing.assert_allclose(fit.var, np.einsum("ij,jk,ik->i", S, K, S) + p.sigma2_xi, atol=1e-12)
        np.testing.assert_allclose(fit.mean, p.beta[0])

    def test_exact_observation(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, n_res=2, with_proxy=False)
        target = 7
        exact = augment(obs, point_block("X", [target], [0.3], 1e-12, grid.n))
        fit = condition(exact, bm, trend, p)
        prior = condition(ObservationSet(()), bm, trend, p)
        assert fit.var[target] <= 1e-6 * prior.var.mean()
        assert fit.mean[target] == pytest.approx(0.3, abs=1e-5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_variance_ignores_values(self, seed):
        r = np.random.default_rng(seed)
        grid, obs, bm, trend, p = random_problem(r)
        a = condition(obs, bm, trend, p)
        b = condition(obs.with_values(r.normal(size=len(obs)) * 5), bm, trend, p)
        np.testing.assert_allclose(a.var, b.var, atol=1e-10, rtol=0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_augmentation_never_raises_variance(self, seed):
        r = np.random.default_rng(seed)
        grid, obs, bm, trend, p = random_problem(r)
        before = condition(obs, bm, trend, p)
        site = int(r.integers(grid.n))
        after = condition(augment(obs, point_block("X", [site], [r.normal()], r.uniform(0.01, 1), grid.n)),
                          bm, trend, p)
        assert (after.var <= before.var + 1e-10).all()

    def test_new_sensor_at_high_variance_bau(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, n_side=6, with_proxy=False)
        before = condition(obs, bm, trend, p)
        site = int(np.argmax(before.var))
        new = augment(obs, point_block("X", [site], [0.0], 0.1, grid.n))
        after = condition(new, bm, trend, p)
        assert after.var[site] < before.var[site]
        mean, cov = frk_prior(bm, trend, p)
        _, v = dense_posterior(mean, cov, new.H, new.error_var, new.values)
        assert after.var[site] == pytest.approx(v[site], abs=1e-10)

    def test_block_average_linearity(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, n_side=6, n_res=2)
        fit = condition(obs, bm, trend, p)
        HQ = build_areal_incidence(nest_blocks(grid, 3, 3), grid.n)
        mean, cov = frk_prior(bm, trend, p)
        H = obs.H.toarray()
        G = H @ cov @ H.T + np.diag(obs.error_var)
        direct = HQ @ mean + (HQ @ cov @ H.T) @ np.linalg.solve(G, obs.values - H @ mean)
        np.testing.assert_allclose(HQ @ fit.mean, direct, atol=1e-10)

    def test_gls_beta(self, rng):
        grid, obs, bm, trend, p = random_problem(rng, n_res=2)
        fit = condition(obs, bm, trend, p, gls_beta=True)
        _, cov = frk_prior(bm, trend, p)
        H = obs.H.toarray()
        Gi = np.linalg.inv(H @ cov @ H.T + np.diag(obs.error_var))
        one = H @ np.ones(grid.n)
        assert fit.params.beta[0] == pytest.approx(one @ Gi @ obs.values / (one @ Gi @ one), abs=1e-10)

    def test_dimension_checks(self, rng):
        grid, obs, bm, trend, p = random_problem(rng)
        with pytest.raises(ValueError):
            condition(obs, bm, TrendSpec.constant(grid.n + 1), p)
        with pytest.raises(ValueError):
            condition(obs, bm, trend, SREParams((0.0, 1.0), p.k, p.sigma2_xi))
        with pytest.raises(ValueError):
            condition(obs, bm, trend, SREParams(p.beta, KParams((1.0, 1.0), (0.2, 0.1)), 0.1))

    def test_predict(self, rng):
        grid, obs, bm, trend, p = random_problem(rng)
        fit = condition(obs, bm, trend, p)
        m, v = predict(fit, grid)
        np.testing.assert_array_equal(m, fit.mean)
        assert (v >= 0).all()
        with pytest.raises(ValueError):
            predict(fit, make_bau_grid(UNIT, 3, 3))


class TestParams:
    def test_k_matrix(self):
        b = make_multires_basis(UNIT, 2, 2)
        K = KParams((1.0, 0.5), (0.3, 0.1)).matrix(b)
        assert K.shape == (20, 20)
        assert (K[:4, 4:] == 0).all()
        assert K[0, 0] == 1.0 and K[5, 5] == 0.5
        assert np.linalg.eigvalsh(K).min() > 0

    def test_validation(self):
        with pytest.raises(ValueError):
            KParams((1.0,), (0.0,))
        with pytest.raises(ValueError):
            KParams((1.0, 2.0), (0.1,))
        with pytest.raises(ValueError):
            SREParams((0.0,), KParams((1.0,), (0.1,)), -1.0)
        with pytest.raises(ValueError):
            TrendSpec(np.ones((5, 2)))

    def test_default_init(self, rng):
        grid, obs, bm, trend, _ = random_problem(rng, n_res=2)
        p = default_init(obs, bm, trend)
        zvar = np.var(obs.blocks[0].values)
        assert p.k.variances == pytest.approx((zvar, zvar))
        assert p.k.lengths == pytest.approx(tuple(1.5 * h for h in bm.basis.spacings))
        assert p.sigma2_xi == pytest.approx(0.1 * zvar)


def _sre_data(seed, grid, bm, k, beta=1.0, sigma2_xi=0.0, n_z=30, err_z=0.05, err_q=0.1):
    r = np.random.default_rng(seed)
    K = k.matrix(bm.basis)
    y = beta + bm.values @ r.multivariate_normal(np.zeros(bm.basis.r), K)
    y = y + np.sqrt(sigma2_xi) * r.standard_normal(grid.n)
    idx = r.choice(grid.n, n_z, replace=False)
    part = nest_blocks(grid, 5, 5)
    q = np.array([y[m].mean() for m in part.members])
    return ObservationSet((
        point_block("Z", idx, y[idx] + np.sqrt(err_z) * r.standard_normal(n_z), err_z, grid.n),
        areal_block(part, q + np.sqrt(err_q) * r.standard_normal(len(part)), err_q),
    )), y


class TestEM:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_ascent(self, seed):
        grid, obs, bm, trend, _ = random_problem(np.random.default_rng(seed), n_res=2)
        fit = em_fit(obs, bm, trend, max_iter=25)
        ll = np.array(fit.loglik_trace)
        assert np.isfinite(ll).all()
        assert (np.diff(ll) >= -1e-9 * np.maximum(1.0, np.abs(ll[:-1]))).all()
        assert (fit.var >= 0).all()

    def test_sigma2_recovery(self):
        grid = make_bau_grid(UNIT, 10, 10)
        bm = eval_basis_matrix(make_multires_basis(UNIT, 2, 2), grid)
        k = KParams((1.0, 0.3), (0.5, 0.2))
        sigma2_y = float(np.mean(np.einsum("ij,jk,ik->i", bm.values, k.matrix(bm.basis), bm.values)))
        est = []
        for rep in range(20):
            obs, _ = _sre_data(rep, grid, bm, k)
            est.append(em_fit(obs, bm, TrendSpec.constant(grid.n), max_iter=200).params.sigma2_xi)
        assert np.mean(est) <= 0.05 * sigma2_y

    def test_flags_non_convergence(self, rng):
        grid, obs, bm, trend, _ = random_problem(rng, n_res=2)
        fit = em_fit(obs, bm, trend, max_iter=1, tol=1e-15)
        assert not fit.converged and fit.n_iter == 1

    def test_fixed_estimate_set(self, rng):
        grid, obs, bm, trend, p = random_problem(rng)
        fit = em_fit(obs, bm, trend, init=p, estimate=("beta",), tol=1e-15,
                     max_iter=3000)
        assert fit.params.k == p.k and fit.params.sigma2_xi == p.sigma2_xi
        assert fit.params.beta[0] == pytest.approx(condition(obs, bm, trend, p, gls_beta=True).params.beta[0],
                                                   abs=1e-6)
        with pytest.raises(ValueError):
            em_fit(obs, bm, trend, estimate=("tau",))

    def test_degenerate_inputs(self, rng):
        grid, obs, bm, trend, _ = random_problem(rng)
        with pytest.raises(ValueError):
            em_fit(ObservationSet((point_block("Z", [0], [1.0], 0.1, grid.n),)), bm, trend)
        with pytest.raises(ValueError):
            em_fit(obs.with_values(np.full(len(obs), np.nan)), bm, trend)

    def test_json(self, rng):
        grid, obs, bm, trend, _ = random_problem(rng)
        fit = em_fit(obs, bm, trend, max_iter=5)
        d = json.loads(fit.to_json())
        assert SREParams.from_dict(d["params"]) == fit.params
        assert SREParams.from_dict(d["init"]) == fit.init
        assert d["loglik_trace"] == list(fit.loglik_trace)
        assert d["n_iter"] == fit.n_iter
