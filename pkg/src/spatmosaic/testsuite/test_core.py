# -*- coding: utf-8 -*-

import io
import math

import numpy as np
from scipy.optimize import minimize

from spatmosaic.core import (ColumnSchema, Family, Location, SpatialDataset,
                             check_rank, fit_glm, holdout_sizes, irls,
                             load_dataset, split_holdout)
from spatmosaic.errors import (ArgumentError, ConditioningError, NumericalError,
                               SchemaError, ValidationError)
from spatmosaic.testsuite import BaseTestCase, TempDirTestCase
from spatmosaic.testsuite.helpers import make_dataset

SCHEMA = ColumnSchema('x', 'y', 'z', ('x1', 'x2'))


def intercept_only(z, family):
    z = np.asarray(z, dtype=float)
    coords = np.column_stack([np.arange(len(z)), np.zeros(len(z))])
    return SpatialDataset(coords, z, np.ones((len(z), 1)), family)


class TestFamily(BaseTestCase):

    def test_parse(self):
        self.assertIs(Family.parse('Poisson'), Family.POISSON)
        self.assertIs(Family.parse(Family.BERNOULLI), Family.BERNOULLI)
        self.assertRaises(ArgumentError, Family.parse, 'gaussian')

    def test_links(self):
        self.assertEqual(Family.POISSON.link_name, 'log')
        self.assertEqual(Family.BERNOULLI.link_name, 'logit')
        eta = np.array([-2.0, 0.0, 1.5])
        for family in Family:
            self.assertArrayAlmostEqual(family.link(family.linkinv(eta)), eta)
        self.assertAlmostEqual(float(Family.BERNOULLI.linkinv(0.0)), 0.5)

    def test_loglik(self):
        value = Family.POISSON.loglik(np.array([2.0]), np.array([math.log(3.0)]))[0]
        self.assertAlmostEqual(value, 2 * math.log(3.0) - 3.0 - math.log(2.0), places=12)
        value = Family.BERNOULLI.loglik(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        self.assertArrayAlmostEqual(value, [-math.log(2.0)] * 2)

    def test_saturated_residuals_are_zero(self):
        z = np.array([1.0, 4.0, 7.0])
        for kind in ('deviance', 'pearson', 'response'):
            self.assertTrue(np.all(Family.POISSON.residuals(z, z, kind) == 0.0))
        b = np.array([0.0, 1.0])
        self.assertTrue(np.all(Family.BERNOULLI.residuals(b, b) == 0.0))
        self.assertRaises(ArgumentError, Family.POISSON.residuals, z, z, 'working')

    def test_validate_responses(self):
        self.assertIsNone(Family.POISSON.validate_responses([0, 3, 10]))
        self.assertEqual(Family.POISSON.validate_responses([0, -1]), 1)
        self.assertEqual(Family.POISSON.validate_responses([0.5]), 0)
        self.assertEqual(Family.BERNOULLI.validate_responses([0, 1, 2]), 2)


class TestDataset(BaseTestCase):

    def test_location(self):
        self.assertEqual(Location(1, 2), (1.0, 2.0))
        self.assertRaises(ValidationError, Location, float('nan'), 0)

    def test_schema_from_string(self):
        self.assertEqual(ColumnSchema.from_string('x', 'y', 'z', 'a, b,'),
                         ColumnSchema('x', 'y', 'z', ('a', 'b')))

    def test_read_only(self):
        data = make_dataset(10)
        with self.assertRaises(ValueError):
            data.z[0] = 5
        self.assertEqual((data.n, data.p), (10, 2))
        self.assertEqual(len(data.locations), 10)

    def test_invalid(self):
        coords = np.zeros((3, 2))
        self.assertRaises(ValidationError, SpatialDataset, coords, [1, 2], np.ones(3), 'poisson')
        self.assertRaises(ValidationError, SpatialDataset, coords, [1, 2, -1], np.ones(3),
                          'poisson')
        self.assertRaises(ValidationError, SpatialDataset, coords, [1, 2, 3], np.ones((3, 0)),
                          'poisson')
        with self.assertRaises(ValidationError) as cm:
            SpatialDataset(coords, [0, 1, np.nan], np.ones(3), 'bernoulli')
        self.assertEqual(cm.exception.row, 3)

    def test_subset(self):
        data = make_dataset(20, seed=3)
        sub = data.subset([4, 2])
        self.assertArrayAlmostEqual(sub.coords, data.coords[[4, 2]])
        self.assertEqual(sub.covariate_names, data.covariate_names)


class TestLoad(TempDirTestCase):

    def write(self, text, name='data.csv'):
        with io.open(self.path(name), 'w', encoding='utf-8') as fp:
            fp.write(text)
        return self.path(name)

    def test_single_row(self):
        path = self.write('x,y,z,x1,x2\n0.5,0.5,3,1.0,0.2\n')
        with self.capture_log():
            data = load_dataset(path, SCHEMA, Family.POISSON)
        self.assertEqual(data.n, 1)
        self.assertEqual(data.z[0], 3)
        self.assertArrayAlmostEqual(data.X[0], [1.0, 0.2])
        self.assertEqual(data.covariate_names, ('x1', 'x2'))

    def test_bad_responses(self):
        path = self.write('x,y,z,x1,x2\n0.5,0.5,3,1,0\n0.1,0.2,-1,1,0\n')
        with self.assertRaises(ValidationError) as cm:
            load_dataset(path, SCHEMA, 'poisson')
        self.assertEqual(cm.exception.row, 2)
        path = self.write('x,y,z,x1,x2\n0.5,0.5,2,1,0\n')
        self.assertRaises(ValidationError, load_dataset, path, SCHEMA, 'bernoulli')

    def test_non_numeric_row_is_reported(self):
        path = self.write('x,y,z,x1,x2\n0.5,0.5,1,1,0\n0.5,abc,1,1,0\n0.1,0.1,1,1,\n')
        with self.assertRaises(ValidationError) as cm:
            load_dataset(path, SCHEMA, 'poisson')
        self.assertEqual(cm.exception.row, 2)
        self.assertIn('data.csv', str(cm.exception))

    def test_missing_column(self):
        path = self.write('x,y,z,x1\n0.5,0.5,1,1\n')
        with self.assertRaises(SchemaError) as cm:
            load_dataset(path, SCHEMA, 'poisson')
        self.assertEqual(cm.exception.column, 'x2')
        self.assertEqual(cm.exception.role, 'covariate')

    def test_exact_reload(self):
        path = self.write('x,y,z,x1,x2\n0.1234567890123456789,0.3,1,1,0.7\n')
        with self.capture_log():
            data = load_dataset(path, SCHEMA, 'poisson')
        self.assertEqual(data.coords[0, 0], 0.1234567890123456789)


class TestHoldout(BaseTestCase):

    def test_sizes(self):
        self.assertEqual(holdout_sizes(125000, 0.2), (100000, 25000))
        self.assertEqual(holdout_sizes(10, 0.25), (8, 2))
        self.assertRaises(ArgumentError, holdout_sizes, 10, 1.0)
        self.assertRaises(ArgumentError, holdout_sizes, 10, 0.0)
        self.assertRaises(ArgumentError, holdout_sizes, 4, 0.1)

    def test_split(self):
        data = make_dataset(10, seed=1)
        a_train, a_valid = split_holdout(data, 0.2, 7)
        b_train, b_valid = split_holdout(data, 0.2, 7)
        self.assertArrayAlmostEqual(a_train.coords, b_train.coords)
        self.assertArrayAlmostEqual(a_valid.coords, b_valid.coords)
        self.assertEqual((a_train.n, a_valid.n), (8, 2))

    def test_split_is_a_partition(self):
        data = make_dataset(57, seed=2)
        key = {tuple(c): i for i, c in enumerate(data.coords)}
        for seed in range(10):
            train, valid = split_holdout(data, 0.3, seed)
            a = {key[tuple(c)] for c in train.coords}
            b = {key[tuple(c)] for c in valid.coords}
            self.assertFalse(a & b)
            self.assertEqual(a | b, set(range(57)))


class TestGlm(BaseTestCase):

    def test_intercept_poisson(self):
        with self.capture_log():
            fit = fit_glm(intercept_only([1, 2, 3], 'poisson'))
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.beta_hat[0], math.log(2.0), places=8)
        self.assertEqual(fit.residuals.shape, (3,))

    def test_intercept_bernoulli(self):
        with self.capture_log():
            fit = fit_glm(intercept_only([0, 1], 'bernoulli'))
        self.assertAlmostEqual(fit.beta_hat[0], 0.0, places=10)

    def test_matches_numerical_optimizer(self):
        data = make_dataset(2000, beta=(1.0, 1.0), seed=11)
        with self.capture_log():
            fit = fit_glm(data)

        def negloglik(beta):
            return -Family.POISSON.loglik(data.z, data.X @ beta).sum()

        def gradient(beta):
            return -data.X.T @ (data.z - np.exp(data.X @ beta))

        best = minimize(negloglik, np.zeros(2), jac=gradient, method='BFGS',
                        options={'gtol': 1e-8})
        self.assertArrayAlmostEqual(fit.beta_hat, best.x, atol=1e-4)
        self.assertTrue(np.all(np.abs(fit.beta_hat - 1.0) < 0.1))
        self.assertTrue(np.all(fit.std_errors > 0))

    def test_row_permutation(self):
        data = make_dataset(300, seed=4)
        perm = np.random.default_rng(0).permutation(data.n)
        with self.capture_log():
            a = fit_glm(data)
            b = fit_glm(data.subset(perm))
        self.assertArrayAlmostEqual(a.beta_hat, b.beta_hat, atol=1e-10)

    def test_residual_kinds(self):
        data = make_dataset(100, seed=5)
        with self.capture_log():
            fit = fit_glm(data, residual='response')
        self.assertArrayAlmostEqual(fit.residuals, data.z - fit.fitted)
        self.assertRaises(ArgumentError, fit_glm, data, 'working')

    def test_rank_deficient(self):
        coords = np.random.default_rng(0).uniform(size=(10, 2))
        X = np.column_stack([np.ones(10), 2 * np.ones(10)])
        data = SpatialDataset(coords, np.arange(10) % 3, X, 'poisson')
        self.assertRaises(ConditioningError, fit_glm, data)
        self.assertRaises(ConditioningError, check_rank, X)

    def test_separation_is_flagged(self):
        x = np.concatenate([np.linspace(-1, -0.05, 10), np.linspace(0.05, 1, 10)])
        coords = np.column_stack([x, np.zeros_like(x)])
        data = SpatialDataset(coords, (x > 0).astype(float),
                              np.column_stack([np.ones_like(x), x]), 'bernoulli')
        with self.capture_log() as buffer:
            fit = fit_glm(data)
        self.assertFalse(fit.converged)
        self.assertTrue(any(r['levelname'] == 'WARNING' for r in buffer))

    def test_overflowing_means(self):

        class Overflowing(object):
            """Poisson whose mean function overflows."""

            def __getattr__(self, name):
                return getattr(Family.POISSON, name)

            def linkinv(self, eta):
                return np.full(np.shape(eta), np.inf)

        X = np.column_stack([np.ones(5), np.arange(5.0)])
        with self.capture_log():
            with self.assertRaises(NumericalError) as cm:
                irls(np.arange(5.0), X, Overflowing())
        self.assertEqual(cm.exception.iteration, 1)
