# -*- coding: utf-8 -*-

import json
import os

import numpy as np
import pandas as pd

from spatmosaic import artifacts
from spatmosaic.core import Family
from spatmosaic.errors import ArgumentError
from spatmosaic.mcmc import PosteriorSamples
from spatmosaic.simulate import SimConfig, make_targets, simulate_dataset
from spatmosaic.testsuite import TempDirTestCase
from spatmosaic.testsuite.helpers import make_dataset


class TestRunDirectory(TempDirTestCase):

    def test_paths(self):
        run = artifacts.RunDirectory(self.path('out'))
        self.assertEqual(run.partition(3, 'fit.json'),
                         os.path.join(self.tmp, 'out', 'partitions', '3', 'fit.json'))
        self.assertFalse(run.exists())
        run.ensure('partitions')
        run.ensure('partitions')
        self.assertTrue(run.exists('partitions'))

    def test_json(self):
        path = self.path('nested', 'a.json')
        artifacts.write_json(path, {'b': [1.5, 2], 'a': float('nan')})
        back = artifacts.read_json(path)
        self.assertEqual(back['b'], [1.5, 2])
        self.assertTrue(np.isnan(back['a']))


class TestDatasets(TempDirTestCase):

    def test_round_trip(self):
        data = make_dataset(n=50, seed=4)
        path = self.path('data.csv')
        artifacts.write_dataset(data, path)
        self.assertFalse(os.path.exists(self.path('data.sim.json')))
        back = artifacts.read_dataset(path, Family.POISSON, data.covariate_names)
        np.testing.assert_array_equal(back.coords, data.coords)
        np.testing.assert_array_equal(back.z, data.z)
        np.testing.assert_array_equal(back.X, data.X)
        self.assertEqual(list(pd.read_csv(path, nrows=0).columns),
                         ['x', 'y', 'z', 'intercept', 'cov1'])

    def test_simulator_sidecar(self):
        config = SimConfig(seed=6, noise_sd=0.3)
        data = simulate_dataset(make_targets(36), config)
        artifacts.write_dataset(data, self.path('sim.csv'))
        with open(self.path('sim.sim.json')) as fp:
            sidecar = json.load(fp)
        self.assertEqual(sidecar['covariate_kinds'], ['normal', 'normal'])
        again = SimConfig.from_dict(sidecar['simulator'])
        self.assertEqual(again.to_dict(), config.to_dict())
        regenerated = simulate_dataset(make_targets(36), again)
        np.testing.assert_array_equal(regenerated.z, data.z)

    def test_partition_map(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.5], [0.25, 0.75]])
        path = self.path('partition_map.csv')
        artifacts.write_partition_map(path, coords, [1, 0, 1])
        self.assertEqual(artifacts.read_partition_map(path).tolist(), [1, 0, 1])
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ['index', 'x', 'y', 'partition'])

    def test_surface(self):
        path = self.path('surface.csv')
        artifacts.write_surface(path, np.array([[0.0, 1.0], [2.0, 3.0]]),
                                np.array([0.1, 1 / 3.]))
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ['x', 'y', 'value'])
        self.assertEqual(frame['value'][1], 1 / 3.)


class TestDraws(TempDirTestCase):

    def test_round_trip(self):
        draws = np.random.default_rng(0).normal(size=(30, 2 + 3 + 1))
        samples = PosteriorSamples(draws, 0.25, np.zeros(0), 0, 2, 3)
        path = self.path('p', 'draws.bin')
        artifacts.write_draws(path, samples)
        self.assertEqual(os.path.getsize(path), 8 * 3 + 8 * draws.size)
        back, p, m = artifacts.read_draws(path)
        self.assertEqual((p, m), (2, 3))
        np.testing.assert_array_equal(back, draws)

        with open(path, 'rb') as fp:
            header = np.frombuffer(fp.read(24), dtype='<i8')
        self.assertEqual(header.tolist(), [30, 2, 3])

    def test_empty_model(self):
        samples = PosteriorSamples(np.ones((4, 2)), 0.2, np.zeros(0), 0, 1, 0)
        artifacts.write_draws(self.path('draws.bin'), samples)
        back, p, m = artifacts.read_draws(self.path('draws.bin'))
        self.assertEqual((back.shape, p, m), ((4, 2), 1, 0))

    def test_truncated(self):
        samples = PosteriorSamples(np.ones((4, 3)), 0.2, np.zeros(0), 0, 1, 1)
        path = self.path('draws.bin')
        artifacts.write_draws(path, samples)
        with open(path, 'rb') as fp:
            raw = fp.read()
        with open(path, 'wb') as fp:
            fp.write(raw[:-8])
        self.assertRaises(ArgumentError, artifacts.read_draws, path)
