# -*- coding: utf-8 -*-
"""
    spatmosaic.core
    ~~~~~~~~~~~~~~~

    Domain types shared by every stage: locations, response families,
    validated datasets, holdout splitting and the non-spatial GLM whose
    residuals drive the clustering.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import enum
import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, gammaln, xlogy

from .errors import (ArgumentError, ConditioningError, NumericalError,
                     SchemaError, ValidationError)
from .util import logger

#: IRLS stops when the relative deviance change drops below this.
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 50

#: Fitted Bernoulli probabilities closer than this to 0 or 1 signal separation.
_SEPARATION_EPS = 1e-10

RESIDUAL_KINDS = ('deviance', 'pearson', 'response')


class Location(namedtuple('Location', 'x y')):
    """A point in the spatial domain, in domain units."""

    __slots__ = ()

    def __new__(cls, x, y):
        x, y = float(x), float(y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError('location ({}, {}) is not finite'.format(x, y))
        return super(Location, cls).__new__(cls, x, y)


class Family(enum.Enum):
    """Response family with its canonical link.

    Poisson uses the log link, Bernoulli the logit link.
    """

    POISSON = 'poisson'
    BERNOULLI = 'bernoulli'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ArgumentError('family', value, "'poisson' or 'bernoulli'")

    @property
    def link_name(self):
        return 'log' if self is Family.POISSON else 'logit'

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self is Family.POISSON:
            return np.log(mu)
        return np.log(mu) - np.log1p(-mu)

    def linkinv(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is Family.POISSON:
            with np.errstate(over='ignore'):
                return np.exp(eta)
        return expit(eta)

    def variance(self, mu):
        """Variance function; equals dmu/deta for the canonical link."""
        if self is Family.POISSON:
            return mu
        return mu * (1.0 - mu)

    def initial_mean(self, z):
        if self is Family.POISSON:
            return z + 0.1
        return (z + 0.5) / 2.0

    def validate_responses(self, z):
        """Return the index of the first invalid response, or ``None``."""
        z = np.asarray(z, dtype=float)
        if self is Family.POISSON:
            bad = (z < 0) | (z != np.floor(z))
        else:
            bad = (z != 0) & (z != 1)
        hits = np.flatnonzero(bad)
        return int(hits[0]) if hits.size else None

    def loglik(self, z, eta):
        """Elementwise log-likelihood of responses ``z`` at linear predictor ``eta``."""
        if self is Family.POISSON:
            with np.errstate(over='ignore'):
                return z * eta - np.exp(eta) - gammaln(z + 1.0)
        return z * eta - np.logaddexp(0.0, eta)

    def unit_deviance(self, z, mu):
        if self is Family.POISSON:
            d = 2.0 * (xlogy(z, z) - xlogy(z, mu) - (z - mu))
        else:
            d = -2.0 * (xlogy(z, mu) + xlogy(1.0 - z, 1.0 - mu))
        return np.maximum(d, 0.0)

    def deviance(self, z, mu):
        return float(np.sum(self.unit_deviance(z, mu)))

    def residuals(self, z, mu, kind='deviance'):
        """GLM residuals of the requested kind."""
        if kind == 'deviance':
            return np.sign(z - mu) * np.sqrt(self.unit_deviance(z, mu))
        if kind == 'pearson':
            return (z - mu) / np.sqrt(self.variance(mu))
        if kind == 'response':
            return z - mu
        raise ArgumentError('residual kind', kind, ' or '.join(RESIDUAL_KINDS))


class LinearPredictor(object):
    """Linear predictor values, one per location."""

    def __init__(self, eta):
        eta = np.asarray(eta, dtype=float)
        if not np.all(np.isfinite(eta)):
            raise ValidationError('linear predictor contains non-finite values')
        self.eta = eta

    def __len__(self):
        return len(self.eta)

    def __repr__(self):
        return 'LinearPredictor(n={})'.format(len(self.eta))


@dataclass(frozen=True)
class ColumnSchema:
    """Mapping from dataset roles to CSV column names."""

    x: str = 'x'
    y: str = 'y'
    z: str = 'z'
    covariates: tuple = ('x1',)

    @classmethod
    def from_string(cls, x, y, z, covariates):
        names = tuple(c.strip() for c in covariates.split(',') if c.strip())
        return cls(x=x, y=y, z=z, covariates=names)


def _freeze(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpatialDataset:
    """Validated observations: locations, integer responses, covariates.

    Arrays are copied and made read-only on construction.

    Attributes:
        coords (ndarray): ``(N, 2)`` locations.
        z (ndarray): ``(N,)`` responses.
        X (ndarray): ``(N, p)`` covariate matrix, ``p >= 1``.
        family (Family): Response family.
        covariate_names (tuple): Column names of ``X``.
        metadata (dict): Free-form provenance (e.g. simulation recipe).
    """

    coords: np.ndarray
    z: np.ndarray
    X: np.ndarray
    family: Family
    covariate_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = _freeze(self.coords)
        z = _freeze(self.z).ravel()
        X = _freeze(self.X)
        if X.ndim == 1:
            X = _freeze(X.reshape(-1, 1))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValidationError('coords must have shape (N, 2)')
        n = coords.shape[0]
        if z.shape[0] != n or X.shape[0] != n:
            raise ValidationError(
                'lengths disagree: {} locations, {} responses, {} covariate '
                'rows'.format(n, z.shape[0], X.shape[0]))
        if X.shape[1] < 1:
            raise ValidationError('at least one covariate column is required')
        for name, arr in (('location', coords), ('response', z),
                          ('covariate', X)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.flatnonzero(bad.reshape(n, -1).any(axis=1))[0])
                raise ValidationError('non-finite {}'.format(name), row=row + 1)
        family = Family.parse(self.family)
        bad = family.validate_responses(z)
        if bad is not None:
            raise ValidationError('response {!r} is not valid for the {} '
                                  'family'.format(z[bad], family.value),
                                  row=bad + 1)
        names = tuple(self.covariate_names) or tuple(
            'x{}'.format(j + 1) for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValidationError('{} covariate names for {} columns'.format(
                len(names), X.shape[1]))
        object.__setattr__(self, 'coords', coords)
        object.__setattr__(self, 'z', z)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'family', family)
        object.__setattr__(self, 'covariate_names', names)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def locations(self):
        return [Location(x, y) for x, y in self.coords]

    def subset(self, index):
        """Dataset restricted to the rows in ``index`` (order preserved)."""
        index = np.asarray(index)
        return SpatialDataset(self.coords[index], self.z[index], self.X[index],
                              self.family, self.covariate_names,
                              dict(self.metadata))

    def __repr__(self):
        return 'SpatialDataset(n={}, p={}, family={!r})'.format(
            self.n, self.p, self.family.value)


def load_dataset(path, schema, family):
    """Read a headered UTF-8 CSV into a validated :class:`SpatialDataset`.

    Args:
        path (str): CSV file with a header row.
        schema (ColumnSchema): Column names for x, y, z and the covariates.
        family (Family or str): Response family.

    Returns:
        SpatialDataset: The validated observations.

    Raises:
        SchemaError: A column named by ``schema`` is missing.
        ValidationError: A row holds a non-numeric or non-finite field, or a
            response invalid for ``family``. Offending rows are reported,
            never dropped.

    """
    family = Family.parse(family)
    if not schema.covariates:
        raise ArgumentError('schema.covariates', schema.covariates,
                            'at least one covariate column')
    frame = pd.read_csv(path, encoding='utf-8', float_precision='round_trip')
    frame.columns = [str(c).strip() for c in frame.columns]
    roles = [('x', schema.x), ('y', schema.y), ('z', schema.z)]
    roles += [('covariate', c) for c in schema.covariates]
    for role, column in roles:
        if column not in frame.columns:
            raise SchemaError(column, role=role, filename=str(path))

    columns = [schema.x, schema.y, schema.z] + list(schema.covariates)
    values = frame[columns].apply(pd.to_numeric, errors='coerce').to_numpy(float)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ValidationError('field {!r} is missing, non-numeric or '
                              'non-finite'.format(columns[col]),
                              row=int(row) + 1, filename=str(path))

    z = values[:, 2]
    first_bad = family.validate_responses(z)
    if first_bad is not None:
        if family is Family.POISSON:
            msg = 'Poisson response {!r} is not a non-negative integer'
        else:
            msg = 'Bernoulli response {!r} is not 0 or 1'
        raise ValidationError(msg.format(z[first_bad]), row=first_bad + 1,
                              filename=str(path))

    data = SpatialDataset(values[:, :2], z, values[:, 3:], family,
                          tuple(schema.covariates), {'source': str(path)})
    logger.info('[load] %d observations, %d covariates from %s',
                data.n, data.p, path)
    return data


def holdout_sizes(n, fraction):
    """Return ``(n_train, n_validation)`` for a holdout ``fraction``."""
    if not 0.0 < fraction < 1.0:
        raise ArgumentError('fraction', fraction, 'a value in (0, 1)')
    # round first so 125000 * 0.8 is not pushed up by representation error
    n_train = int(math.ceil(round(n * (1.0 - fraction), 9)))
    n_val = n - n_train
    if round(n * fraction, 9) < 1 or n_val < 1:
        raise ArgumentError('fraction', fraction,
                            'N * fraction >= 1 (N = {})'.format(n))
    return n_train, n_val


def split_holdout(data, fraction, seed):
    """Uniform random train/validation split, deterministic for ``seed``.

    Returns:
        (SpatialDataset, SpatialDataset): ``ceil(N * (1 - fraction))``
            training rows and the remaining validation rows, each in their
            original order.

    """
    n_train, _ = holdout_sizes(data.n, fraction)
    perm = np.random.default_rng(seed).permutation(data.n)
    train = np.sort(perm[:n_train])
    valid = np.sort(perm[n_train:])
    return data.subset(train), data.subset(valid)


@dataclass
class GlmFit:
    """Non-spatial GLM fit.

    Attributes:
        beta_hat (ndarray): Maximum likelihood coefficients.
        residuals (ndarray): Residuals of the requested kind, one per row.
        converged (bool): ``False`` on iteration cap, non-finite updates or
            Bernoulli separation.
        iterations (int): IRLS iterations performed.
        fitted (ndarray): Fitted means.
        deviance (float): Residual deviance.
        std_errors (ndarray): Asymptotic standard errors of ``beta_hat``.
        residual_kind (str): Which residual ``residuals`` holds.
    """

    beta_hat: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    fitted: np.ndarray
    deviance: float
    std_errors: np.ndarray
    residual_kind: str = 'deviance'

    def predict_mean(self, X, family):
        return family.linkinv(np.asarray(X, dtype=float) @ self.beta_hat)


def check_rank(X, extra_msg=''):
    """Raise :class:`ConditioningError` unless ``X`` has full column rank."""
    rank = int(np.linalg.matrix_rank(X))
    if rank < X.shape[1]:
        raise ConditioningError(rank, X.shape[1], extra_msg)


def irls(z, X, family, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER, offset=None):
    """Iteratively reweighted least squares for a canonical-link GLM.

    Returns:
        tuple: ``(beta, mu, iterations, converged, deviance)``.

    Raises:
        NumericalError: The fitted means overflow.

    """
    z = np.asarray(z, dtype=float)
    X = np.asarray(X, dtype=float)
    off = np.zeros_like(z) if offset is None else offset
    beta = np.zeros(X.shape[1])
    mu = family.initial_mean(z)
    eta = family.link(mu)
    dev_old = family.deviance(z, mu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.maximum(family.variance(mu), 1e-300)
        working = eta - off + (z - mu) / w
        sw = np.sqrt(w)
        beta_new = np.linalg.lstsq(X * sw[:, None], working * sw, rcond=None)[0]
        if not np.all(np.isfinite(beta_new)):
            logger.warning('[glm] non-finite coefficients at iteration %d', it)
            break
        beta = beta_new
        eta = X @ beta + off
        mu = family.linkinv(eta)
        if not np.all(np.isfinite(mu)):
            raise NumericalError('fitted means overflow', it)
        dev = family.deviance(z, mu)
        logger.debug('[glm] iteration=%d deviance=%.10g', it, dev)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev
    else:
        logger.warning('[glm] no convergence after %d iterations', max_iter)

    if family is Family.BERNOULLI and converged:
        if np.any((mu < _SEPARATION_EPS) | (mu > 1.0 - _SEPARATION_EPS)):
            logger.warning('[glm] fitted probabilities 0 or 1: separation, '
                           'coefficients diverge')
            converged = False
    return beta, mu, it, converged, family.deviance(z, mu)


def fit_glm(data, residual='deviance'):
    """Fit the non-spatial GLM ``g(E[Z]) = X beta`` by IRLS.

    Args:
        data (SpatialDataset): Observations.
        residual (str): Residual kind returned: ``'deviance'`` (default),
            ``'pearson'`` or ``'response'``.

    Returns:
        GlmFit: Coefficients, residuals and convergence information.

    Raises:
        ConditioningError: ``X`` is numerically rank deficient.
        NumericalError: IRLS overflows.

    """
    if residual not in RESIDUAL_KINDS:
        raise ArgumentError('residual kind', residual,
                            ' or '.join(RESIDUAL_KINDS))
    check_rank(data.X)
    family = data.family
    beta, mu, iterations, converged, dev = irls(data.z, data.X, family)
    w = family.variance(mu)
    try:
        cov = np.linalg.inv(data.X.T @ (data.X * w[:, None]))
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(data.p, np.nan)
    resid = family.residuals(data.z, mu, residual)
    logger.info('[glm] beta=%s converged=%s iterations=%d deviance=%.6g',
                np.array2string(beta, precision=4), converged, iterations, dev)
    return GlmFit(beta, resid, converged, iterations, mu, dev, se, residual)
