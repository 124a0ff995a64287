# -*- coding: utf-8 -*-

import math

import numpy as np
from scipy.spatial.distance import cdist

from spatmosaic.basis import (BasisSet, candidate_knots, default_lambdas,
                              kkt_gradient, lasso_path_fit, penalized_fit,
                              select_basis, select_lambda, soft_threshold,
                              tps_eval, tps_matrix, weighted_lasso)
from spatmosaic.core import Family, fit_glm, irls
from spatmosaic.errors import ArgumentError
from spatmosaic.testsuite import BaseTestCase
from spatmosaic.testsuite.helpers import bump, loglik_gradient, make_dataset
from spatmosaic.util import regular_grid


def soft(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


class TestSpline(BaseTestCase):

    def test_tps_eval(self):
        self.assertEqual(tps_eval((0, 0), (1, 0)), 0.0)
        self.assertEqual(tps_eval((0.3, 0.7), (0.3, 0.7)), 0.0)
        self.assertAlmostEqual(tps_eval((0, 0), (math.e, 0)), math.e ** 2, places=12)

    def test_rigid_motion(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            s, u = rng.uniform(-2, 2, size=(2, 2))
            theta = rng.uniform(0, 2 * math.pi)
            R = np.array([[math.cos(theta), -math.sin(theta)],
                          [math.sin(theta), math.cos(theta)]])
            shift = rng.uniform(-10, 10, size=2)
            moved = tps_eval(R @ s + shift, R @ u + shift)
            self.assertAlmostEqual(moved, tps_eval(s, u), delta=1e-12)

    def test_matrix_matches_pointwise(self):
        rng = np.random.default_rng(0)
        locations = rng.uniform(size=(15, 2))
        knots = np.vstack([rng.uniform(size=(4, 2)), locations[:1]])
        Phi = tps_matrix(locations, knots)
        self.assertEqual(Phi.shape, (15, 5))
        expected = [[tps_eval(s, u) for u in knots] for s in locations]
        self.assertArrayAlmostEqual(Phi, expected, rtol=1e-12, atol=1e-15)
        self.assertEqual(Phi[0, 4], 0.0)


class TestKnots(BaseTestCase):

    def test_square(self):
        locations = regular_grid(30, 30, (0, 0, 1, 1))
        knots = candidate_knots(locations, 81)
        self.assertEqual(knots.shape, (81, 2))
        self.assertArrayAlmostEqual(knots, regular_grid(9, 9, (0, 0, 1, 1)))

    def test_l_shape(self):
        grid = regular_grid(30, 30, (0, 0, 1, 1))
        locations = grid[(grid[:, 0] <= 0.5) | (grid[:, 1] <= 0.5)]
        knots = candidate_knots(locations, 100)
        self.assertLess(len(knots), 100)
        full = regular_grid(10, 10, (0, 0, 1, 1))
        nearest = cdist(full, locations).min(axis=1)
        spacing = 1.0 / 9
        self.assertArrayAlmostEqual(knots, full[nearest <= spacing * (1 + 1e-9)])
        self.assertTrue(np.all(nearest[nearest > spacing * (1 + 1e-9)] > spacing))

    def test_aspect_ratio(self):
        locations = regular_grid(40, 10, (0, 0, 4, 1))
        knots = candidate_knots(locations, 36)
        xs, ys = np.unique(knots[:, 0]), np.unique(knots[:, 1])
        self.assertEqual((len(xs), len(ys)), (12, 3))

    def test_degenerate(self):
        self.assertEqual(candidate_knots([(0.2, 0.2)] * 5, 10).shape, (1, 2))
        line = np.column_stack([np.linspace(0, 1, 20), np.zeros(20)])
        self.assertEqual(candidate_knots(line, 5).shape, (5, 2))
        self.assertRaises(ArgumentError, candidate_knots, line, 0)

    def test_basis_set(self):
        locations = regular_grid(10, 10, (0, 0, 1, 1))
        basis = BasisSet.build(locations, 16)
        self.assertEqual(basis.design.shape, (100, 16))
        chosen = basis.with_selection([3, 7])
        self.assertEqual(chosen.selected_design.shape, (100, 2))
        self.assertArrayAlmostEqual(chosen.selected_knots, basis.candidate_knots[[3, 7]])
        flags = [k['active'] for k in chosen.to_dict()['knots']]
        self.assertEqual(np.flatnonzero(flags).tolist(), [3, 7])
        self.assertRaises(ArgumentError, basis.with_selection, [16])


class TestCoordinateDescent(BaseTestCase):

    def test_soft_threshold(self):
        self.assertAlmostEqual(soft_threshold(0.8, 0.5), 0.3)
        self.assertAlmostEqual(soft_threshold(-0.8, 0.5), -0.3)
        self.assertEqual(soft_threshold(0.4, 0.5), 0.0)

    def test_marginal_example(self):
        Q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(50, 3)))
        y = 0.8 * Q[:, 0]
        _, delta, _ = weighted_lasso(y, np.zeros((50, 0)), Q, 0.5, np.ones(50))
        self.assertArrayAlmostEqual(delta, [0.3, 0.0, 0.0], atol=1e-12)

    def test_orthonormal_designs(self):
        rng = np.random.default_rng(2)
        for trial in range(50):
            Q, _ = np.linalg.qr(rng.normal(size=(200, 10)))
            y = Q @ rng.normal(scale=2.0, size=10) + rng.normal(size=200)
            lam = rng.uniform(0.1, 2.0)
            _, delta, _ = weighted_lasso(y, np.zeros((200, 0)), Q, lam, np.ones(200))
            self.assertArrayAlmostEqual(delta, soft(Q.T @ y, lam), atol=1e-6)

    def test_unpenalized_intercept(self):
        rng = np.random.default_rng(3)
        Q, _ = np.linalg.qr(np.column_stack([np.ones(200), rng.normal(size=(200, 10))]))
        Phi = Q[:, 1:]
        y = 3.0 + Phi @ rng.normal(scale=2.0, size=10) + rng.normal(size=200)
        beta, delta, _ = weighted_lasso(y, np.ones((200, 1)), Phi, 0.7, np.ones(200))
        self.assertAlmostEqual(beta[0], y.mean(), places=8)
        self.assertArrayAlmostEqual(delta, soft(Phi.T @ y, 0.7), atol=1e-6)


class TestLasso(BaseTestCase):

    def setUp(self):
        super(TestLasso, self).setUp()
        self.data = make_dataset(300, beta=(0.5, 0.3), seed=4, field=bump)
        self.Phi = tps_matrix(self.data.coords, regular_grid(5, 5, (0, 0, 1, 1)))

    def test_full_shrinkage(self):
        data = self.data
        with self.capture_log():
            lam_max = penalized_fit(data.z, data.X, self.Phi, data.family, 1.0).lambda_max
            fit = penalized_fit(data.z, data.X, self.Phi, data.family, 2 * lam_max)
            glm = fit_glm(data)
        self.assertTrue(np.all(fit.delta == 0.0))
        self.assertEqual(fit.active_set.size, 0)
        self.assertArrayAlmostEqual(fit.beta, glm.beta_hat, rtol=1e-6, atol=1e-8)

    def test_zero_penalty_is_the_glm(self):
        data = self.data
        Phi = tps_matrix(data.coords, regular_grid(3, 3, (0, 0, 1, 1)))
        with self.capture_log():
            fit = penalized_fit(data.z, data.X, Phi, data.family, 0.0)
            coef, _, _, converged, _ = irls(data.z, np.hstack([data.X, Phi]), data.family)
        self.assertTrue(converged)
        self.assertFalse(fit.truncated)
        self.assertEqual(fit.active_set.size, 9)
        self.assertArrayAlmostEqual(np.concatenate([fit.beta, fit.delta]), coef,
                                    rtol=1e-4, atol=1e-4)

    def test_kkt(self):
        data = self.data
        with self.capture_log():
            lam_max = penalized_fit(data.z, data.X, self.Phi, data.family, 1.0).lambda_max
        for ratio in (0.5, 0.2):
            lam = ratio * lam_max
            with self.capture_log():
                fit = penalized_fit(data.z, data.X, self.Phi, data.family, lam)
            g = kkt_gradient(fit, data.z, data.X, self.Phi, data.family)
            active = fit.delta != 0
            self.assertTrue(np.all(np.abs(g[~active]) <= lam * (1 + 1e-4)))
            self.assertArrayAlmostEqual(g[active], lam * np.sign(fit.delta[active]),
                                        rtol=1e-4)
            # the fixed effects are unpenalized: their score vanishes
            eta = data.X @ fit.beta + self.Phi @ fit.delta
            score = loglik_gradient(data.z, eta, data.X, data.family) / data.n
            self.assertArrayAlmostEqual(score, 0.0, atol=1e-6 * lam_max + 1e-8)

    def test_path_and_cv(self):
        data = self.data
        with self.capture_log():
            fit = lasso_path_fit(data.z, data.X, self.Phi, data.family, seed=1)
        self.assertEqual(len(fit.lambdas), 50)
        self.assertAlmostEqual(fit.lambdas[0], fit.lambda_max)
        self.assertFalse(fit.truncated)
        self.assertEqual(fit.cv_deviance.shape, (50,))
        self.assertEqual(fit.lam, select_lambda(fit.cv_deviance, fit.lambdas))
        self.assertArrayAlmostEqual(fit.active_set, np.flatnonzero(fit.delta))
        self.assertGreater(fit.active_set.size, 0)
        with self.capture_log():
            again = lasso_path_fit(data.z, data.X, self.Phi, data.family, seed=1)
        self.assertArrayAlmostEqual(again.delta, fit.delta)

    def test_explicit_lambdas(self):
        data = self.data
        with self.capture_log():
            fit = lasso_path_fit(data.z, data.X, self.Phi, data.family,
                                 lambdas=[1e3, 5e2])
        self.assertEqual(fit.active_set.size, 0)
        self.assertEqual(fit.lam, 1e3)
        self.assertRaises(ArgumentError, lasso_path_fit, data.z, data.X, self.Phi,
                          data.family, [0.1, 0.2])

    def test_noise_only_is_sparse(self):
        data = make_dataset(300, beta=(0.5, 0.3), seed=6)
        with self.capture_log():
            basis, fit = select_basis(data.coords, data.z, data.X, data.family, 25, seed=0)
        self.assertLess(fit.active_set.size, basis.m // 2)
        self.assertArrayAlmostEqual(basis.selected, fit.active_set)

    def test_tiny_partition_skips_cv(self):
        data = make_dataset(12, seed=7)
        Phi = tps_matrix(data.coords, regular_grid(2, 2, (0, 0, 1, 1)))
        with self.capture_log() as buffer:
            fit = lasso_path_fit(data.z, data.X, Phi, data.family)
        self.assertIsNone(fit.cv_deviance)
        self.assertEqual(fit.lam, fit.lambdas[0])
        self.assertTrue(any('cross-validation skipped' in r['msg'] for r in buffer))

    def test_empty_design(self):
        data = make_dataset(30, seed=8)
        with self.capture_log():
            fit = lasso_path_fit(data.z, data.X, np.zeros((30, 0)), data.family)
            glm = fit_glm(data)
        self.assertEqual(fit.delta.shape, (0,))
        self.assertArrayAlmostEqual(fit.beta, glm.beta_hat, rtol=1e-8)

    def test_bernoulli(self):
        data = make_dataset(400, family=Family.BERNOULLI, beta=(0.0, 0.5), seed=9,
                            field=lambda s: 2 * bump(s))
        Phi = tps_matrix(data.coords, regular_grid(4, 4, (0, 0, 1, 1)))
        with self.capture_log():
            fit = lasso_path_fit(data.z, data.X, Phi, data.family, seed=2)
        self.assertEqual(fit.delta.shape, (16,))
        self.assertTrue(np.all(np.isfinite(fit.beta)))


class TestSelectLambda(BaseTestCase):

    def test_unanimous(self):
        self.assertEqual(select_lambda([5.0, 2.0, 3.0], [1.0, 0.5, 0.25]), 0.5)

    def test_tie_goes_to_larger(self):
        self.assertEqual(select_lambda([4.0, 2.0, 2.0], [1.0, 0.5, 0.25]), 0.5)
        self.assertEqual(select_lambda([2.0, 2.0], [1.0, 0.5]), 1.0)

    def test_errors(self):
        self.assertRaises(ArgumentError, select_lambda, [1.0], [1.0])
        self.assertRaises(ArgumentError, select_lambda, [1.0, 2.0], [1.0])

    def test_default_grid(self):
        grid = default_lambdas(2.0)
        self.assertEqual(len(grid), 50)
        self.assertAlmostEqual(grid[0], 2.0)
        self.assertAlmostEqual(grid[-1], 2e-3)
        self.assertTrue(np.all(np.diff(grid) < 0))
