# -*- coding: utf-8 -*-
"""
    spatmosaic.smoothing
    ~~~~~~~~~~~~~~~~~~~~

    Blend the fitted local processes into one global surface.

    Each partition contributes its spline random effect at a location ``s``
    with weight ``c_k(s) ~ exp(-d_k(s)^2)``, ``d_k`` being the distance from
    ``s`` to the nearest member of partition ``k``; partitions farther than
    ``gamma`` get weight 0 and the rest are normalized to sum 1. The fixed
    effects come from the home partition of ``s`` only.

    Distances are queried per location from one k-d tree per partition, so
    no observation-by-observation matrix is ever built.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from multiprocessing.dummy import Pool

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .basis import tps_matrix
from .core import Family, Location
from .errors import ArgumentError
from .util import as_coords, chunks, logger

DEFAULT_GAMMAS = (0.1, 0.25, 0.5, 1.0)
CHUNK_SIZE = 4096


@dataclass
class FittedPartition:
    """What smoothing needs from one fitted partition.

    Attributes:
        index (int): Partition label.
        members (ndarray): ``(N_k, 2)`` training locations of the partition.
        knots (ndarray): ``(m_k, 2)`` selected knots.
        beta (ndarray): Posterior mean fixed effects.
        delta (ndarray): Posterior mean spline coefficients.
        beta_draws (ndarray, optional): ``(S, p)`` retained draws.
        delta_draws (ndarray, optional): ``(S, m_k)`` retained draws.
    """

    index: int
    members: np.ndarray
    knots: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    beta_draws: np.ndarray = None
    delta_draws: np.ndarray = None
    tree: cKDTree = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.members = as_coords(self.members)
        self.knots = np.asarray(self.knots, dtype=float).reshape(-1, 2)
        self.beta = np.asarray(self.beta, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.members.shape[0] == 0:
            raise ArgumentError('partition {}'.format(self.index), 'empty',
                                'at least one member location')
        if self.delta.shape != (self.knots.shape[0],):
            raise ArgumentError('delta', self.delta.shape,
                                '({},) to match the knots'.format(self.knots.shape[0]))
        if self.tree is None:
            self.tree = cKDTree(self.members)

    @classmethod
    def from_samples(cls, index, members, knots, samples, max_draws=None):
        """Posterior means and, optionally, thinned retained draws."""
        beta, delta = samples.posterior_mean()
        part = cls(index, members, knots, beta, delta)
        if max_draws:
            kept = samples.retained()
            pick = np.unique(np.linspace(0, kept.shape[0] - 1,
                                         min(max_draws, kept.shape[0])).astype(int))
            part.beta_draws = kept[pick, :samples.p]
            part.delta_draws = kept[pick, samples.p:samples.p + samples.m]
        return part

    @property
    def n_draws(self):
        return 0 if self.beta_draws is None else self.beta_draws.shape[0]

    def contribution(self, coords, draws=None):
        """Spline random effect ``Phi_k(s) delta_k`` at ``coords``."""
        if self.knots.shape[0] == 0:
            return np.zeros((coords.shape[0],) if draws is None
                            else (coords.shape[0], len(draws)))
        phi = tps_matrix(coords, self.knots)
        if draws is None:
            return phi @ self.delta
        return phi @ self.delta_draws[draws].T


@dataclass
class WeightVector:
    """Nonzero smoothing weights at one location.

    Attributes:
        partitions (ndarray): Partition indices with positive weight.
        weights (ndarray): Matching weights, summing to 1.
        fallback (bool): No partition was within ``gamma``; the nearest one
            got weight 1.
    """

    partitions: np.ndarray
    weights: np.ndarray
    fallback: bool = False

    def dense(self, K):
        out = np.zeros(K)
        out[self.partitions] = self.weights
        return out


def weights_from_distances(D, gamma):
    """Normalized truncated ``exp(-d^2)`` weights from nearest distances.

    Args:
        D (ndarray): ``(n, K)`` distances from each location to the nearest
            member of each partition.
        gamma (float): Truncation radius.

    Returns:
        tuple: ``(W, fallback)`` with ``W`` of shape ``(n, K)`` and a
        boolean flag per row.

    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    inside = D <= gamma
    fallback = ~inside.any(axis=1)
    sq = D * D
    # shift by the smallest in-radius exponent; the ratio is unchanged
    shift = np.where(inside, sq, np.inf).min(axis=1)
    shift[fallback] = 0.0
    W = np.where(inside, np.exp(-(sq - shift[:, None])), 0.0)
    if fallback.any():
        rows = np.flatnonzero(fallback)
        W[rows, np.argmin(D[rows], axis=1)] = 1.0
    W /= W.sum(axis=1, keepdims=True)
    return W, fallback


class GlobalPredictor(object):
    """Global surface assembled from fitted partitions.

    Args:
        partitions (list): :class:`FittedPartition`, one per label ``0..K-1``.
        gamma (float): Weighting radius in domain units.
        family (Family): Response family.
    """

    def __init__(self, partitions, gamma, family):
        if not gamma > 0:
            raise ArgumentError('gamma', gamma, 'a positive radius')
        self.partitions = sorted(partitions, key=lambda part: part.index)
        if [part.index for part in self.partitions] != list(range(len(self.partitions))):
            raise ArgumentError('partitions', [part.index for part in self.partitions],
                                'labels 0..K-1')
        self.gamma = float(gamma)
        self.family = Family.parse(family)
        members = [part.members for part in self.partitions]
        self._labels = np.concatenate([np.full(len(m), part.index)
                                       for m, part in zip(members, self.partitions)])
        self._all = cKDTree(np.vstack(members))

    @property
    def K(self):
        return len(self.partitions)

    @property
    def p(self):
        return self.partitions[0].beta.shape[0]

    @property
    def n_draws(self):
        return min(part.n_draws for part in self.partitions)

    def with_gamma(self, gamma):
        """Same fits, another radius."""
        other = object.__new__(GlobalPredictor)
        other.__dict__.update(self.__dict__)
        if not gamma > 0:
            raise ArgumentError('gamma', gamma, 'a positive radius')
        other.gamma = float(gamma)
        return other

    def home_partition(self, coords):
        """Partition of the nearest training location."""
        _, idx = self._all.query(as_coords(coords), k=1)
        return self._labels[idx]

    def distances(self, coords):
        """``(n, K)`` distances to the nearest member of every partition."""
        coords = as_coords(coords)
        D = np.empty((coords.shape[0], self.K))
        for part in self.partitions:
            D[:, part.index] = part.tree.query(coords, k=1, eps=0.0)[0]
        return D

    def contributions(self, coords, mask=None):
        """``(n, K)`` posterior-mean random effects of every partition.

        Entries where ``mask`` is False are left at 0.
        """
        coords = as_coords(coords)
        C = np.zeros((coords.shape[0], self.K))
        for part in self.partitions:
            rows = slice(None) if mask is None else np.flatnonzero(mask[:, part.index])
            if mask is not None and rows.size == 0:
                continue
            C[rows, part.index] = part.contribution(coords[rows])
        return C

    def fixed_effects(self, X, home):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ArgumentError('covariates', X.shape, '{} columns'.format(self.p))
        B = np.vstack([part.beta for part in self.partitions])
        return np.einsum('ij,ij->i', X, B[home])

    def _eta_chunk(self, coords, X, home):
        D = self.distances(coords)
        W, fallback = weights_from_distances(D, self.gamma)
        C = self.contributions(coords, W > 0)
        return assemble_eta(self.fixed_effects(X, home), W, C), fallback

    def _eta_draws_chunk(self, coords, X, home, draws):
        W, fallback = weights_from_distances(self.distances(coords), self.gamma)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = np.zeros((coords.shape[0], len(draws)))
        for part in self.partitions:
            rows = np.flatnonzero(home == part.index)
            if rows.size:
                eta[rows] += X[rows] @ part.beta_draws[draws].T
        for part in self.partitions:
            rows = np.flatnonzero(W[:, part.index] > 0)
            if rows.size:
                eta[rows] += W[rows, part.index, None] * part.contribution(coords[rows], draws)
        return eta, fallback

    def predict_eta(self, coords, X, home=None, draws=None, workers=1,
                    chunk_size=CHUNK_SIZE):
        """Global linear predictor at many locations.

        Args:
            coords (ndarray): ``(n, 2)`` locations.
            X (ndarray): ``(n, p)`` covariates.
            home (ndarray, optional): Home partition per location; default
                the partition of the nearest training location.
            draws (ndarray, optional): Retained draw indices; when given the
                result has one column per draw.
            workers (int): Threads evaluating location chunks.

        Returns:
            tuple: ``(eta, home, fallback)``.

        """
        coords = as_coords(coords)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape != (coords.shape[0], self.p):
            raise ArgumentError('covariates', X.shape,
                                '({}, {})'.format(coords.shape[0], self.p))
        home = self.home_partition(coords) if home is None else np.asarray(home, dtype=int)
        if draws is not None:
            draws = np.asarray(draws, dtype=int)
            if self.n_draws == 0 or draws.max() >= self.n_draws:
                raise ArgumentError('draws', draws.max() if draws.size else draws,
                                    'indices below {} stored draws'.format(self.n_draws))

        index = np.arange(coords.shape[0])
        pieces = chunks(chunk_size, index) or [index]

        def job(rows):
            if draws is None:
                return self._eta_chunk(coords[rows], X[rows], home[rows])
            return self._eta_draws_chunk(coords[rows], X[rows], home[rows], draws)

        if workers > 1 and len(pieces) > 1:
            pool = Pool(workers)
            try:
                results = [pool.apply_async(job, (rows,)) for rows in pieces]
                results = [r.get() for r in results]
            finally:
                pool.close()
                pool.join()
        else:
            results = [job(rows) for rows in pieces]
        eta = np.concatenate([r[0] for r in results])
        fallback = np.concatenate([r[1] for r in results])
        if fallback.any():
            logger.warning('[smooth] %d of %d locations had no partition within '
                           'gamma=%g; nearest partition used', fallback.sum(),
                           len(fallback), self.gamma)
        return eta, home, fallback


def assemble_eta(fixed, W, C):
    """``fixed + sum_k W[:, k] * C[:, k]``."""
    return fixed + (W * C).sum(axis=1)


def nearest_in_partition(s, k, predictor):
    """Nearest member of partition ``k`` to ``s`` and its distance.

    Returns:
        tuple: ``(Location, distance)``.

    """
    part = predictor.partitions[k]
    d, i = part.tree.query(as_coords(s)[0], k=1, eps=0.0)
    x, y = part.members[i]
    return Location(x, y), float(d)


def compute_weights(s, predictor):
    """Smoothing weights of every partition at one location."""
    s = as_coords(s)
    if not np.all(np.isfinite(s)):
        raise ArgumentError('location', s, 'finite coordinates')
    W, fallback = weights_from_distances(predictor.distances(s), predictor.gamma)
    nz = np.flatnonzero(W[0])
    return WeightVector(nz, W[0, nz], bool(fallback[0]))


def global_eta(s, x_s, home_partition, predictor, draws=None):
    """Global linear predictor at one location.

    Uses the home partition's ``beta`` and the weighted spline effects of
    every partition within ``gamma``. With ``draws`` (retained draw indices)
    returns one value per draw, otherwise the posterior-mean value.
    """
    x_s = np.asarray(x_s, dtype=float).ravel()
    if x_s.shape != (predictor.p,):
        raise ArgumentError('x_s', x_s.shape, '({},)'.format(predictor.p))
    if not 0 <= int(home_partition) < predictor.K:
        raise ArgumentError('home_partition', home_partition,
                            'a label below {}'.format(predictor.K))
    eta, _, _ = predictor.predict_eta(as_coords(s), x_s[None, :],
                                      home=[int(home_partition)], draws=draws)
    return eta[0] if draws is not None else float(eta[0])


def predict_response(eta_draws, family):
    """Predictive mean and central 95% interval of the mean response.

    ``eta_draws`` holds draws along its last axis.

    Returns:
        tuple: ``(mean, lo, hi)``.

    """
    eta_draws = np.asarray(eta_draws, dtype=float)
    if eta_draws.size == 0 or eta_draws.shape[-1] < 1:
        raise ArgumentError('eta draws', eta_draws.shape, 'at least one draw')
    mu = Family.parse(family).linkinv(eta_draws)
    lo, hi = np.quantile(mu, [0.025, 0.975], axis=-1)
    return mu.mean(axis=-1), lo, hi


def rcvmspe(predictions, truth):
    """Root mean squared prediction error."""
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predictions.size == 0 or predictions.shape != truth.shape:
        raise ArgumentError('predictions', predictions.shape,
                            'a non-empty vector shaped like truth {}'.format(truth.shape))
    return float(np.sqrt(np.mean((truth - predictions) ** 2)))


def misclassification_rate(prob, truth, threshold=0.5):
    """Fraction of responses where ``prob >= threshold`` disagrees with ``truth``."""
    prob = np.asarray(prob, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if prob.size == 0 or prob.shape != truth.shape:
        raise ArgumentError('predictions', prob.shape,
                            'a non-empty vector shaped like truth {}'.format(truth.shape))
    if np.any((prob < 0) | (prob > 1)):
        raise ArgumentError('probabilities', 'outside [0, 1]', 'values in [0, 1]')
    return float(np.mean((prob >= threshold).astype(float) != truth))


def score(mu, truth, family, metric='auto'):
    """rCVMSPE for counts, misclassification rate for binary responses."""
    if metric == 'auto':
        metric = 'misclassification' if Family.parse(family) is Family.BERNOULLI else 'rcvmspe'
    if metric == 'rcvmspe':
        return rcvmspe(mu, truth)
    if metric == 'misclassification':
        return misclassification_rate(mu, truth)
    raise ArgumentError('metric', metric, "'auto', 'rcvmspe' or 'misclassification'")


@dataclass
class GammaScores:
    """Outcome of a radius sweep."""

    best_gamma: float
    table: pd.DataFrame
    metric: str = 'rcvmspe'

    def __iter__(self):
        return iter((self.best_gamma, self.table))


def tune_gamma(predictor, gammas, validation, metric='auto'):
    """Score each candidate radius on a validation set, reusing the fits.

    Distances and per-partition random effects at the validation locations
    are computed once; every candidate only reweights them. Ties go to the
    smaller radius.

    Returns:
        GammaScores: Best radius and a table with columns ``gamma``,
        ``score`` and ``fallback``.

    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ArgumentError('gammas', gammas, 'at least one candidate')
    for g in gammas:
        if not g > 0:
            raise ArgumentError('gamma', g, 'a positive radius')
    if metric == 'auto':
        metric = ('misclassification' if predictor.family is Family.BERNOULLI
                  else 'rcvmspe')

    coords = validation.coords
    home = predictor.home_partition(coords)
    D = predictor.distances(coords)
    C = predictor.contributions(coords)
    fixed = predictor.fixed_effects(validation.X, home)

    rows = []
    for g in gammas:
        W, fallback = weights_from_distances(D, g)
        mu = predictor.family.linkinv(assemble_eta(fixed, W, C))
        value = score(mu, validation.z, predictor.family, metric)
        rows.append({'gamma': g, 'score': value, 'fallback': int(fallback.sum())})
        logger.info('[tune] gamma=%g %s=%.6g fallback=%d', g, metric, value,
                    fallback.sum())
    table = pd.DataFrame(rows, columns=['gamma', 'score', 'fallback'])
    order = table.sort_values(['score', 'gamma'], kind='mergesort')
    best = float(order['gamma'].iloc[0])
    return GammaScores(best, table, metric)


def prediction_frame(coords, eta, home, fallback, family, eta_draws=None):
    """Prediction table in the exported column layout."""
    coords = as_coords(coords)
    family = Family.parse(family)
    if eta_draws is not None:
        mean, lo, hi = predict_response(eta_draws, family)
    else:
        mean = family.linkinv(eta)
        lo = hi = np.full(len(eta), np.nan)
    return pd.DataFrame({'index': np.arange(coords.shape[0]),
                         'x': coords[:, 0], 'y': coords[:, 1],
                         'eta_mean': eta, 'response_mean': mean,
                         'lo95': lo, 'hi95': hi,
                         'home_partition': home,
                         'fallback_flag': fallback.astype(int)})

