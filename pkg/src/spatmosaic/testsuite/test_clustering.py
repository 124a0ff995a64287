# -*- coding: utf-8 -*-

import numpy as np

from spatmosaic.clustering import (Adjacency, ClusterSummary, Lattice,
                                   agglomerate, build_lattice,
                                   cluster_dissimilarity, partition_domain,
                                   voronoi_neighbors)
from spatmosaic.errors import (ArgumentError, DegenerateGeometryError,
                               InfeasiblePartitionError)
from spatmosaic.testsuite import BaseTestCase
from spatmosaic.testsuite.helpers import (brute_delaunay_edges, connected,
                                          exhaustive_chain_merge, make_dataset,
                                          naive_agglomerate)
from spatmosaic.util import regular_grid


def chain_lattice(residuals, counts=None):
    n = len(residuals)
    counts = [1] * n if counts is None else counts
    members, start = [], 0
    for c in counts:
        members.append(np.arange(start, start + c))
        start += c
    cell_of = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    points = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return Lattice(points, members, np.asarray(residuals, dtype=float), cell_of, (n, 1))


class TestLattice(BaseTestCase):

    def test_one_point_per_cell(self):
        coords = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.9]])
        with self.capture_log():
            lattice = build_lattice(coords, [1, 2, 3, 4], 4)
        self.assertEqual(lattice.shape, (2, 2))
        self.assertArrayAlmostEqual(lattice.avg_residuals, [1, 2, 3, 4])
        self.assertArrayAlmostEqual(lattice.counts, [1, 1, 1, 1])

    def test_cell_average(self):
        coords = np.array([[0.1, 0.1], [0.2, 0.2], [0.9, 0.9]])
        with self.capture_log():
            lattice = build_lattice(coords, [1.0, 3.0, 0.0], 4)
        self.assertEqual(lattice.size, 2)
        self.assertArrayAlmostEqual(lattice.avg_residuals, [2.0, 0.0])
        self.assertEqual(sorted(lattice.member_sets[0].tolist()), [0, 1])
        self.assertArrayAlmostEqual(lattice.cell_of, [0, 0, 1])

    def test_members_partition_observations(self):
        data = make_dataset(2000, seed=1)
        residuals = np.random.default_rng(1).normal(size=data.n)
        with self.capture_log():
            lattice = build_lattice(data, residuals, 900)
        self.assertLessEqual(lattice.size, 900)
        everyone = np.sort(np.concatenate(lattice.member_sets))
        self.assertArrayAlmostEqual(everyone, np.arange(data.n))
        for i, members in enumerate(lattice.member_sets):
            self.assertAlmostEqual(lattice.avg_residuals[i], residuals[members].mean())

    def test_errors(self):
        coords = np.random.default_rng(0).uniform(size=(10, 2))
        self.assertRaises(ArgumentError, build_lattice, coords, np.zeros(10), 1)
        self.assertRaises(ArgumentError, build_lattice, coords, np.zeros(9), 4)


class TestVoronoi(BaseTestCase):

    def test_triangle(self):
        adj = voronoi_neighbors([(0, 0), (1, 0), (0, 1)])
        self.assertEqual(adj.pairs.tolist(), [[0, 1], [0, 2], [1, 2]])
        self.assertTrue(adj.contains(2, 1))

    def test_unit_square(self):
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
        adj = voronoi_neighbors(corners)
        self.assertEqual(len(adj), 5)
        # diagonal through the lexicographically smallest corner
        self.assertTrue(adj.contains(0, 3))
        self.assertFalse(adj.contains(1, 2))
        self.assertTrue(set(map(tuple, adj.pairs.tolist())) <= brute_delaunay_edges(corners))
        again = voronoi_neighbors([(1, 1), (0, 1), (1, 0), (0, 0)])
        self.assertTrue(again.contains(3, 0))

    def test_grid(self):
        points = regular_grid(3, 3, (0, 0, 1, 1))
        adj = voronoi_neighbors(points)
        for corner in (0, 2, 6, 8):
            self.assertGreaterEqual(len(adj.neighbors(corner)), 2)
        self.assertTrue(set(map(tuple, adj.pairs.tolist())) <= brute_delaunay_edges(points))
        # every unit cell contributes its 4 sides and exactly one diagonal
        self.assertEqual(len(adj), 12 + 4)
        self.assertEqual(adj.components(), 1)

    def test_random_points_match_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            points = rng.uniform(size=(25, 2))
            adj = voronoi_neighbors(points)
            self.assertEqual(set(map(tuple, adj.pairs.tolist())),
                             brute_delaunay_edges(points))

    def test_degenerate(self):
        self.assertRaises(DegenerateGeometryError, voronoi_neighbors, [(0, 0), (1, 1)])
        self.assertRaises(DegenerateGeometryError, voronoi_neighbors,
                          [(0, 0), (1, 1), (2, 2), (3, 3)])

    def test_adjacency(self):
        self.assertRaises(ArgumentError, Adjacency, [(1, 1)], 3)
        self.assertRaises(ArgumentError, Adjacency, [(0, 3)], 3)
        adj = Adjacency([(1, 0), (0, 1), (2, 3)], 4)
        self.assertEqual(adj.pairs.tolist(), [[0, 1], [2, 3]])
        self.assertEqual(adj.components(), 2)
        self.assertEqual(Adjacency.chain(4).components(), 1)


class TestDissimilarity(BaseTestCase):

    def test_arithmetic(self):
        a = ClusterSummary(1, 0.0, np.array([[0.0, 0.0]]))
        b = ClusterSummary(1, 2.0, np.array([[1.0, 0.0]]))
        self.assertAlmostEqual(cluster_dissimilarity(a, b), 2.0)
        a = ClusterSummary(2, 1.0, np.array([[0.0, 0.0]]))
        b = ClusterSummary(1, 4.0, np.array([[3.0, 0.0]]))
        self.assertAlmostEqual(cluster_dissimilarity(a, b), 2.0)

    def test_equal_means(self):
        a = ClusterSummary(7, 1.5, np.array([[0.0, 0.0], [0.0, 1.0]]))
        b = ClusterSummary(3, 1.5, np.array([[2.0, 0.0]]))
        self.assertEqual(cluster_dissimilarity(a, b), 0.0)

    def test_coincident(self):
        a = ClusterSummary(1, 0.0, np.array([[0.0, 0.0]]))
        self.assertRaises(DegenerateGeometryError, cluster_dissimilarity, a, a)


class TestAgglomerate(BaseTestCase):

    def test_identity(self):
        lattice = chain_lattice([0.0, 1.0, 2.0])
        with self.capture_log():
            part = agglomerate(lattice, Adjacency.chain(3), 3)
        self.assertArrayAlmostEqual(part.labels, [0, 1, 2])

    def test_chain(self):
        lattice = chain_lattice([0.0, 0.1, 5.0, 5.1])
        with self.capture_log():
            part = agglomerate(lattice, Adjacency.chain(4), 2)
        self.assertEqual(part.labels.tolist(), [0, 0, 1, 1])
        self.assertEqual(part.sizes().tolist(), [2, 2])

    def test_matches_exhaustive_search_on_chains(self):
        self.assertEqual(exhaustive_chain_merge([1] * 4, [0.0, 0.1, 5.0, 5.1], 2).tolist(),
                         [0, 0, 1, 1])
        rng = np.random.default_rng(8)
        for n in range(2, 9):
            for K in range(1, n + 1):
                residuals = rng.normal(size=n)
                counts = rng.integers(1, 4, size=n).tolist()
                lattice = chain_lattice(residuals, counts)
                with self.capture_log():
                    part = agglomerate(lattice, Adjacency.chain(n), K)
                expected = exhaustive_chain_merge(counts, residuals, K)
                self.assertEqual(part.lattice_labels.tolist(), expected.tolist())

    def test_matches_naive_merging_on_small_lattices(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            coords = rng.uniform(size=(60, 2))
            residuals = rng.normal(size=60)
            with self.capture_log():
                lattice = build_lattice(coords, residuals, 16)
                adj = voronoi_neighbors(lattice.points)
                K = int(rng.integers(1, lattice.size + 1))
                part = agglomerate(lattice, adj, K)
            expected = naive_agglomerate(lattice.points, lattice.counts.tolist(),
                                         lattice.avg_residuals, adj.pairs, K)
            self.assertEqual(part.lattice_labels.tolist(), expected.tolist(),
                             'trial %d' % trial)

    def test_shifting_residuals_keeps_partitions(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            data = make_dataset(600, seed=30 + trial)
            residuals = rng.normal(size=data.n)
            K = int(rng.integers(2, 8))
            with self.capture_log():
                base = partition_domain(data, residuals, K, 100)
                for c in (-5.0, 0.5, 12.0):
                    shifted = partition_domain(data, residuals + c, K, 100)
                    self.assertEqual(shifted.labels.tolist(), base.labels.tolist(),
                                     'trial %d, c=%g' % (trial, c))

    def test_random_fields(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            n = 150
            coords = rng.uniform(size=(n, 2))
            residuals = rng.normal(size=n)
            K = int(rng.integers(1, 10))
            with self.capture_log():
                lattice = build_lattice(coords, residuals, 49)
                adj = voronoi_neighbors(lattice.points)
                part = agglomerate(lattice, adj, K)
            self.assertEqual(part.K, K)
            self.assertEqual(part.sizes().sum(), n)
            self.assertTrue(np.all(part.sizes() > 0))
            for k in range(K):
                cells = np.flatnonzero(part.lattice_labels == k)
                self.assertTrue(connected(cells, adj.pairs), 'trial %d' % trial)

    def test_errors(self):
        lattice = chain_lattice([0.0, 1.0, 2.0, 3.0])
        self.assertRaises(ArgumentError, agglomerate, lattice, Adjacency.chain(4), 0)
        self.assertRaises(ArgumentError, agglomerate, lattice, Adjacency.chain(4), 5)
        self.assertRaises(ArgumentError, agglomerate, lattice, Adjacency.chain(3), 2)
        split = Adjacency([(0, 1), (2, 3)], 4)
        self.assertRaises(InfeasiblePartitionError, agglomerate, lattice, split, 1)

    def test_partition_domain(self):
        data = make_dataset(400, seed=2)
        residuals = np.random.default_rng(2).normal(size=data.n)
        single = partition_domain(data, residuals, 1)
        self.assertEqual(single.labels.tolist(), [0] * data.n)
        with self.capture_log():
            part = partition_domain(data, residuals, 4, 100)
        self.assertEqual(part.K, 4)
        self.assertEqual(sorted(set(part.labels.tolist())), [0, 1, 2, 3])
