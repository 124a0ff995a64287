# -*- coding: utf-8 -*-
"""
    spatmosaic.clustering
    ~~~~~~~~~~~~~~~~~~~~~

    Partition the domain into K contiguous subregions by agglomerating
    lattice cells of averaged GLM residuals. Only Voronoi neighbours
    (Delaunay edges) may merge, so every partition stays connected.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay
from scipy.spatial.distance import cdist

from .errors import (ArgumentError, DegenerateGeometryError,
                     InfeasiblePartitionError)
from .util import as_coords, bounding_box, logger, regular_grid

DEFAULT_LATTICE = 900


@dataclass
class Lattice:
    """Observations pooled onto the occupied cells of a regular grid.

    Attributes:
        points (ndarray): ``(L, 2)`` centres of occupied cells.
        member_sets (list): Observation indices pooled into each cell.
        avg_residuals (ndarray): Mean residual per cell.
        cell_of (ndarray): Cell index of every observation.
        shape (tuple): ``(nx, ny)`` of the full grid before empty cells
            were dropped.
    """

    points: np.ndarray
    member_sets: list
    avg_residuals: np.ndarray
    cell_of: np.ndarray
    shape: tuple = (0, 0)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def counts(self):
        return np.array([len(m) for m in self.member_sets])


class Adjacency(object):
    """Symmetric neighbour pairs over ``n_points`` points.

    Pairs are stored once, as ``(i, j)`` with ``i < j``, sorted.
    """

    def __init__(self, pairs, n_points):
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        if (pairs[:, 0] == pairs[:, 1]).any():
            raise ArgumentError('pairs', 'self pair', 'distinct endpoints')
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n_points):
            raise ArgumentError('pairs', 'out of range',
                                'indices below {}'.format(n_points))
        self.pairs = np.unique(pairs, axis=0) if pairs.size else pairs
        self.n_points = int(n_points)
        self._neighbors = None

    def neighbors(self, i):
        if self._neighbors is None:
            nb = [set() for _ in range(self.n_points)]
            for a, b in self.pairs:
                nb[a].add(int(b))
                nb[b].add(int(a))
            self._neighbors = nb
        return self._neighbors[i]

    def contains(self, i, j):
        return j in self.neighbors(i)

    def components(self):
        """Number of connected components of the neighbour graph."""
        if self.n_points == 0:
            return 0
        a, b = self.pairs[:, 0], self.pairs[:, 1]
        graph = coo_matrix((np.ones(len(a)), (a, b)),
                           shape=(self.n_points, self.n_points))
        n, _ = connected_components(graph, directed=False)
        return int(n)

    def __len__(self):
        return len(self.pairs)

    def __repr__(self):
        return 'Adjacency(n_points={}, pairs={})'.format(self.n_points,
                                                         len(self.pairs))

    @classmethod
    def chain(cls, n):
        """Path graph ``0 - 1 - ... - n-1``."""
        return cls([(i, i + 1) for i in range(n - 1)], n)


@dataclass
class Partitioning:
    """Assignment of observations (and lattice cells) to K partitions.

    Labels are 0-based: ``0 <= label < K``.
    """

    K: int
    labels: np.ndarray
    lattice_labels: np.ndarray

    def sizes(self):
        return np.bincount(self.labels, minlength=self.K)

    def members(self, k):
        return np.flatnonzero(self.labels == k)


@dataclass
class ClusterSummary:
    """What the merge criterion needs to know about one cluster.

    Attributes:
        n_obs (int): Number of observations in the cluster.
        mean_residual (float): Mean residual over those observations.
        points (ndarray): Lattice points belonging to the cluster.
    """

    n_obs: int
    mean_residual: float
    points: np.ndarray


def build_lattice(data, residuals, L_target=DEFAULT_LATTICE):
    """Pool observations onto a regular ``ceil(sqrt(L))`` square grid.

    Each observation goes to its nearest grid point (the centre of the grid
    cell it falls in); empty cells are dropped.

    Raises:
        ArgumentError: ``L_target < 2`` or residual length mismatch.

    """
    if L_target < 2:
        raise ArgumentError('L_target', L_target, 'at least 2')
    residuals = np.asarray(residuals, dtype=float)
    coords = data.coords if hasattr(data, 'coords') else as_coords(data)
    if residuals.shape != (coords.shape[0],):
        raise ArgumentError('residuals', residuals.shape,
                            'one value per observation ({})'.format(coords.shape[0]))
    if not np.all(np.isfinite(residuals)):
        raise ArgumentError('residuals', 'non-finite', 'finite values')

    g = int(math.ceil(math.sqrt(L_target)))
    xmin, ymin, xmax, ymax = bounding_box(coords)
    wx = (xmax - xmin) / g or 1.0
    wy = (ymax - ymin) / g or 1.0
    ix = np.clip(np.floor((coords[:, 0] - xmin) / wx).astype(int), 0, g - 1)
    iy = np.clip(np.floor((coords[:, 1] - ymin) / wy).astype(int), 0, g - 1)
    flat = iy * g + ix

    counts = np.bincount(flat, minlength=g * g)
    sums = np.bincount(flat, weights=residuals, minlength=g * g)
    occupied = np.flatnonzero(counts)
    remap = np.full(g * g, -1)
    remap[occupied] = np.arange(occupied.size)
    cell_of = remap[flat]

    grid = regular_grid(g, g, (xmin, ymin, xmin + wx * g, ymin + wy * g),
                        centers=True)
    order = np.argsort(cell_of, kind='stable')
    splits = np.cumsum(counts[occupied])[:-1]
    members = np.split(order, splits)

    lattice = Lattice(points=grid[occupied],
                      member_sets=members,
                      avg_residuals=sums[occupied] / counts[occupied],
                      cell_of=cell_of,
                      shape=(g, g))
    logger.info('[lattice] %d of %d cells occupied', lattice.size, g * g)
    return lattice


def _incircle(a, b, c, d):
    """Signed in-circle determinant; positive if ``d`` is inside circle abc
    (abc counter-clockwise)."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    ad = adx * adx + ady * ady
    bd = bdx * bdx + bdy * bdy
    cd = cdx * cdx + cdy * cdy
    return float(adx * (bdy * cd - bd * cdy)
                 - ady * (bdx * cd - bd * cdx)
                 + ad * (bdx * cdy - bdy * cdx))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _lex_key(points, i):
    return (points[i, 0], points[i, 1], i)


def _canonical_flips(points, triangles, tol):
    """Flip diagonals of cocircular quads onto the lexicographically smallest
    vertex, until no quad changes."""
    triangles = [tuple(t) for t in triangles]
    scale = float(np.ptp(points, axis=0).max()) or 1.0
    for _ in range(len(triangles) + 4):
        edges = {}
        for ti, tri in enumerate(triangles):
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])):
                edges.setdefault(tuple(sorted(e)), []).append(ti)
        touched = set()
        for (a, b), owners in sorted(edges.items()):
            if len(owners) != 2 or touched.intersection(owners):
                continue
            t1, t2 = triangles[owners[0]], triangles[owners[1]]
            c = [v for v in t1 if v not in (a, b)][0]
            d = [v for v in t2 if v not in (a, b)][0]
            pa, pb, pc, pd = points[a], points[b], points[c], points[d]
            # convex quad: c and d on opposite sides of ab, a and b of cd
            if _orient(pa, pb, pc) * _orient(pa, pb, pd) >= 0:
                continue
            if _orient(pc, pd, pa) * _orient(pc, pd, pb) >= 0:
                continue
            if _orient(pa, pb, pc) < 0:
                pa, pb = pb, pa
            if abs(_incircle(pa, pb, pc, pd)) > tol * scale ** 4:
                continue
            smallest = min((a, b, c, d), key=lambda i: _lex_key(points, i))
            if smallest in (a, b):
                continue
            triangles[owners[0]] = (a, c, d)
            triangles[owners[1]] = (b, c, d)
            touched.update(owners)
        if not touched:
            return triangles
    logger.warning('[delaunay] cocircular tie-breaking did not settle')
    return triangles


def voronoi_neighbors(points, tol=1e-10):
    """Voronoi neighbour pairs, computed as Delaunay triangulation edges.

    Quads of cocircular points admit two triangulations; the diagonal that
    touches the lexicographically smallest of the four points is kept, so
    the output depends only on the input coordinates and their order.

    Raises:
        DegenerateGeometryError: fewer than 3 points or all collinear.

    """
    pts = as_coords(points)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateGeometryError('need at least 3 points', n)
    centred = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-12 * (np.abs(centred).max() or 1.0)) < 2:
        raise DegenerateGeometryError('all points are collinear', n)

    tri = Delaunay(pts)
    triangles = _canonical_flips(pts, tri.simplices, tol)
    pairs = set()
    for t in triangles:
        for i, j in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
            pairs.add((min(i, j), max(i, j)))
    adjacency = Adjacency(sorted(pairs), n)
    logger.debug('[delaunay] %d points, %d edges', n, len(adjacency))
    return adjacency


def _ward(n1, n2, e1, e2, ebar):
    return (n1 * n2 / float(n1 + n2)) * (e1 - e2) ** 2 / ebar


def cluster_dissimilarity(a, b):
    """Ward-type residual dissimilarity scaled by ``1 / mean distance``.

    ``d = [n_a n_b / (n_a + n_b)] (mean_a - mean_b)^2 / Ebar`` where ``Ebar``
    is the mean Euclidean distance over all cross-cluster lattice-point
    pairs.

    Raises:
        DegenerateGeometryError: ``Ebar == 0``.

    """
    if a.n_obs < 1 or b.n_obs < 1:
        raise ArgumentError('cluster size', (a.n_obs, b.n_obs), 'non-empty clusters')
    ebar = float(cdist(as_coords(a.points), as_coords(b.points)).mean())
    if ebar <= 0.0:
        raise DegenerateGeometryError('clusters share a single location; '
                                      'mean distance is zero')
    return _ward(a.n_obs, b.n_obs, a.mean_residual, b.mean_residual, ebar)


class _Agglomerator(object):
    """Greedy adjacency-constrained merging with a lazily invalidated heap."""

    def __init__(self, lattice, adjacency):
        L = lattice.size
        self.points = lattice.points
        self.cells = {i: [i] for i in range(L)}
        counts = lattice.counts.astype(float)
        self.n_obs = {i: counts[i] for i in range(L)}
        self.sum_res = {i: counts[i] * lattice.avg_residuals[i] for i in range(L)}
        self.neighbors = {i: set(adjacency.neighbors(i)) for i in range(L)}
        self.version = {i: 0 for i in range(L)}
        # summed cross distances between neighbouring clusters
        self.dist_sum = {}
        self.heap = []
        for a, b in adjacency.pairs:
            a, b = int(a), int(b)
            self.dist_sum[(a, b)] = float(np.hypot(*(self.points[a] - self.points[b])))
            self._push(a, b)

    def _key(self, a, b):
        return (a, b) if a < b else (b, a)

    def _cross_sum(self, a, b):
        key = self._key(a, b)
        if key not in self.dist_sum:
            self.dist_sum[key] = float(cdist(self.points[self.cells[a]],
                                             self.points[self.cells[b]]).sum())
        return self.dist_sum[key]

    def dissimilarity(self, a, b):
        ebar = self._cross_sum(a, b) / (len(self.cells[a]) * len(self.cells[b]))
        if ebar <= 0.0:
            raise DegenerateGeometryError('coincident lattice points')
        na, nb = self.n_obs[a], self.n_obs[b]
        return _ward(na, nb, self.sum_res[a] / na, self.sum_res[b] / nb, ebar)

    def _push(self, a, b):
        a, b = self._key(a, b)
        heapq.heappush(self.heap, (self.dissimilarity(a, b), a, b,
                                   self.version[a], self.version[b]))

    def pop(self):
        while self.heap:
            d, a, b, va, vb = heapq.heappop(self.heap)
            if a in self.cells and b in self.cells and \
                    self.version[a] == va and self.version[b] == vb:
                return d, a, b
        return None

    def merge(self, a, b):
        keep, gone = min(a, b), max(a, b)
        others = (self.neighbors[keep] | self.neighbors[gone]) - {keep, gone}
        merged_sums = {c: self._cross_sum(keep, c) + self._cross_sum(gone, c)
                       for c in others}
        self.cells[keep] = self.cells[keep] + self.cells.pop(gone)
        self.n_obs[keep] += self.n_obs.pop(gone)
        self.sum_res[keep] += self.sum_res.pop(gone)
        for key in [k for k in self.dist_sum if keep in k or gone in k]:
            del self.dist_sum[key]
        for c, s in merged_sums.items():
            self.dist_sum[self._key(keep, c)] = s
        for c in self.neighbors.pop(gone):
            if c != keep:
                self.neighbors[c].discard(gone)
                self.neighbors[c].add(keep)
        self.neighbors[keep] = others
        self.version[keep] += 1
        for c in others:
            self._push(keep, c)


def agglomerate(lattice, adjacency, K):
    """Merge neighbouring lattice clusters until ``K`` remain.

    Starts from one cluster per occupied cell and repeatedly merges the
    adjacent pair with the smallest :func:`cluster_dissimilarity`; the merged
    cluster inherits the union of both neighbour sets. Ties are broken
    towards the pair with the smallest cluster ids.

    Raises:
        ArgumentError: ``K < 1`` or ``K`` exceeds the occupied cells.
        InfeasiblePartitionError: the adjacency graph has more than ``K``
            connected components.

    """
    L = lattice.size
    if K < 1 or K > L:
        raise ArgumentError('K', K, 'between 1 and {} occupied cells'.format(L))
    if adjacency.n_points != L:
        raise ArgumentError('adjacency', adjacency.n_points,
                            '{} points (one per lattice cell)'.format(L))
    components = adjacency.components()
    if components > K:
        raise InfeasiblePartitionError(components, K)

    state = _Agglomerator(lattice, adjacency)
    merges = 0
    while len(state.cells) > K:
        hit = state.pop()
        if hit is None:
            raise InfeasiblePartitionError(len(state.cells), K)
        d, a, b = hit
        logger.debug('[cluster] merge %d + %d (d=%.6g), %d clusters left',
                     a, b, d, len(state.cells) - 1)
        state.merge(a, b)
        merges += 1

    lattice_labels = np.empty(L, dtype=int)
    for label, root in enumerate(sorted(state.cells)):
        lattice_labels[state.cells[root]] = label
    labels = lattice_labels[lattice.cell_of]
    logger.info('[cluster] %d merges, %d partitions', merges, K)
    return Partitioning(K=K, labels=labels, lattice_labels=lattice_labels)


def single_partition(n):
    """The trivial partitioning with every observation in partition 0."""
    return Partitioning(K=1, labels=np.zeros(n, dtype=int),
                        lattice_labels=np.zeros(1, dtype=int))


def partition_domain(data, residuals, K, L_target=DEFAULT_LATTICE):
    """Lattice pooling, Delaunay adjacency and agglomeration in one call."""
    if K == 1:
        return single_partition(data.n)
    lattice = build_lattice(data, residuals, L_target)
    adjacency = voronoi_neighbors(lattice.points)
    return agglomerate(lattice, adjacency, K)
