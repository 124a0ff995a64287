# -*- coding: utf-8 -*-

from __future__ import annotations

import functools
import itertools
import math
import os
import unittest

import numpy as np

from spatmosaic.core import Family, SpatialDataset

SLOW_TESTS = os.getenv('SMB_SLOW_TESTS', '') not in ('', '0')


def requires_slow():
    return unittest.skipUnless(SLOW_TESTS, 'Set SMB_SLOW_TESTS=1 for statistical runs')


def requires_fork():
    import multiprocessing
    return unittest.skipUnless('fork' in multiprocessing.get_all_start_methods(),
                               'Requires the fork start method')


def make_dataset(n=200, family=Family.POISSON, beta=(0.5, 0.3), seed=0,
                 field=None):
    """Uniform locations on the unit square, an intercept and one normal
    covariate, responses drawn from ``family`` around ``X beta + field(s)``."""
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    eta = X @ np.asarray(beta, dtype=float)
    if field is not None:
        eta = eta + field(coords)
    family = Family.parse(family)
    if family is Family.POISSON:
        z = rng.poisson(np.exp(eta))
    else:
        z = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta)))
    return SpatialDataset(coords, z, X, family, ('intercept', 'cov1'))


def bump(coords):
    """Smooth two-bump surface used as a stand-in spatial effect."""
    x, y = coords[:, 0], coords[:, 1]
    return (np.exp(-((x - 0.25) ** 2 + (y - 0.3) ** 2) / 0.02)
            - np.exp(-((x - 0.7) ** 2 + (y - 0.75) ** 2) / 0.03))


# ----------------------------------------------------------------------
# Brute-force oracles
# ----------------------------------------------------------------------

def brute_delaunay_edges(points, tol=1e-9):
    """Edges of every triangle whose circumcircle is empty of other points.

    Cocircular quads contribute both diagonals.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    edges = set()
    for i, j, k in itertools.combinations(range(n), 3):
        a, b, c = pts[i], pts[j], pts[k]
        det = 2.0 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if abs(det) < 1e-12:
            continue
        sa, sb, sc = a.dot(a), b.dot(b), c.dot(c)
        ux = (sa * (b[1] - c[1]) + sb * (c[1] - a[1]) + sc * (a[1] - b[1])) / det
        uy = (sa * (c[0] - b[0]) + sb * (a[0] - c[0]) + sc * (b[0] - a[0])) / det
        r2 = (a[0] - ux) ** 2 + (a[1] - uy) ** 2
        d2 = (pts[:, 0] - ux) ** 2 + (pts[:, 1] - uy) ** 2
        d2[[i, j, k]] = np.inf
        if np.all(d2 >= r2 - tol):
            edges.update({(i, j), (i, k), (j, k)})
    return edges


def _ward_by_cells(points, counts, avg_residuals, ca, cb):
    na = sum(counts[i] for i in ca)
    nb = sum(counts[i] for i in cb)
    ea = sum(counts[i] * avg_residuals[i] for i in ca) / na
    eb = sum(counts[i] * avg_residuals[i] for i in cb) / nb
    dist = [math.hypot(*(points[i] - points[j])) for i in ca for j in cb]
    return (na * nb / float(na + nb)) * (ea - eb) ** 2 / (sum(dist) / len(dist))


def exhaustive_chain_merge(counts, avg_residuals, K):
    """Search every merge order of a chain of cells at ``x = 0, 1, ...``.

    Orders are compared by their sequence of merge dissimilarities; the
    lexicographically smallest one wins. Returns the lattice labels of its
    ``K`` final blocks, numbered left to right.
    """
    n = len(counts)
    points = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])

    @functools.lru_cache(maxsize=None)
    def best(blocks):
        if len(blocks) == K:
            return (), blocks
        options = []
        for i in range(len(blocks) - 1):
            d = _ward_by_cells(points, counts, avg_residuals, blocks[i], blocks[i + 1])
            merged = blocks[:i] + (blocks[i] + blocks[i + 1],) + blocks[i + 2:]
            rest, final = best(merged)
            options.append(((d,) + rest, final))
        return min(options, key=lambda option: option[0])

    _, final = best(tuple((i,) for i in range(n)))
    labels = np.empty(n, dtype=int)
    for label, block in enumerate(final):
        labels[list(block)] = label
    return labels


def naive_agglomerate(points, counts, avg_residuals, pairs, K):
    """Agglomeration recomputing every adjacent dissimilarity from scratch.

    Returns lattice labels, numbered by the smallest cell of each cluster.
    """
    points = np.asarray(points, dtype=float)
    clusters = {i: [i] for i in range(len(points))}
    adjacent = {tuple(sorted(p)) for p in np.asarray(pairs, dtype=int).tolist()}

    def dissimilarity(a, b):
        return _ward_by_cells(points, counts, avg_residuals, clusters[a], clusters[b])

    while len(clusters) > K:
        d, a, b = min((dissimilarity(a, b), a, b) for a, b in adjacent)
        clusters[a] = clusters[a] + clusters.pop(b)
        adjacent = {tuple(sorted((a if u == b else u, a if v == b else v)))
                    for u, v in adjacent}
        adjacent = {(u, v) for u, v in adjacent if u != v}
    labels = np.empty(len(points), dtype=int)
    for label, root in enumerate(sorted(clusters)):
        labels[clusters[root]] = label
    return labels


def connected(cells, pairs):
    """Breadth-first check that ``cells`` form one connected subgraph."""
    cells = set(int(c) for c in cells)
    if not cells:
        return False
    nb = {c: set() for c in cells}
    for a, b in np.asarray(pairs, dtype=int).tolist():
        if a in cells and b in cells:
            nb[a].add(b)
            nb[b].add(a)
    start = next(iter(cells))
    seen, frontier = {start}, [start]
    while frontier:
        nxt = []
        for c in frontier:
            for d in nb[c] - seen:
                seen.add(d)
                nxt.append(d)
        frontier = nxt
    return seen == cells


def dense_weights(coords, members, labels, K, gamma):
    """Smoothing weights from the full location-by-member distance matrix."""
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - np.asarray(members, dtype=float)[None, :, :]
    full = np.sqrt((diff ** 2).sum(axis=2))
    D = np.column_stack([full[:, labels == k].min(axis=1) for k in range(K)])
    W = np.where(D <= gamma, np.exp(-D ** 2), 0.0)
    for i in np.flatnonzero(W.sum(axis=1) == 0):
        W[i, np.argmin(D[i])] = 1.0
    return W / W.sum(axis=1, keepdims=True)


def tps(r):
    return 0.0 if r == 0 else r * r * math.log(r)


def dense_global_eta(coords, X, home, partitions, gamma):
    """Global linear predictor assembled one location and knot at a time."""
    members = np.vstack([p.members for p in partitions])
    labels = np.concatenate([np.full(len(p.members), p.index) for p in partitions])
    W = dense_weights(coords, members, labels, len(partitions), gamma)
    eta = np.empty(len(coords))
    for i, s in enumerate(np.asarray(coords, dtype=float)):
        value = float(np.dot(X[i], partitions[home[i]].beta))
        for part in partitions:
            if W[i, part.index] == 0:
                continue
            effect = sum(tps(math.hypot(*(s - u))) * d
                         for u, d in zip(part.knots, part.delta))
            value += W[i, part.index] * effect
        eta[i] = value
    return eta


def loglik_gradient(z, eta, Phi, family):
    """Gradient of the log-likelihood in the spline coefficients."""
    mu = Family.parse(family).linkinv(eta)
    return np.asarray(Phi).T @ (np.asarray(z) - mu)


def batch_means_mcse(x, n_batches=50):
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    means = x[:size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
