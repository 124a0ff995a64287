# -*- coding: utf-8 -*-
"""
    spatmosaic.basis
    ~~~~~~~~~~~~~~~~

    Thin plate spline bases on a per-partition candidate knot grid, and the
    lasso that selects which knots each local model keeps.

    The lasso minimises ``-loglik / N + lambda * sum_j |delta_j|`` over the
    standardized basis columns; the fixed effects carry no penalty.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import xlogy

from .core import Family, irls
from .errors import ArgumentError, ConditioningError
from .util import as_coords, bounding_box, logger, regular_grid

N_LAMBDA = 50
LAMBDA_RATIO = 1e-3
N_FOLDS = 5
#: partitions with fewer observations than this skip cross-validation
MIN_CV_OBS = 4 * N_FOLDS

CD_TOL = 1e-14
CD_MAX_SWEEPS = 100000
OUTER_TOL = 1e-10
OUTER_MAX_ITER = 100
#: beyond this |eta| a Bernoulli fit is treated as separated
_SEPARATION_ETA = 30.0


def tps_eval(s, u):
    """Thin plate spline ``r^2 log r`` between two locations (0 at ``r = 0``)."""
    r = math.hypot(s[0] - u[0], s[1] - u[1])
    if r == 0.0:
        return 0.0
    return r * r * math.log(r)


def tps_matrix(locations, knots):
    """Evaluate every knot's spline at every location.

    Returns:
        ndarray: ``(n, m)`` design matrix.

    """
    r = cdist(as_coords(locations), as_coords(knots))
    # xlogy gives 0 where r == 0
    return 0.5 * xlogy(r * r, r * r)


def candidate_knots(locations, m_target):
    """Regular knot grid over a partition, culled to where the data are.

    The grid has about ``m_target`` points with the same aspect ratio as the
    partition's bounding box, edges included. Grid points farther than one
    grid spacing from every observation are dropped.

    Returns:
        ndarray: ``(m, 2)`` knot coordinates.

    """
    if m_target < 1:
        raise ArgumentError('m_target', m_target, 'at least 1')
    coords = as_coords(locations)
    if coords.shape[0] == 0:
        raise ArgumentError('locations', 'empty', 'a non-empty partition')
    xmin, ymin, xmax, ymax = bounding_box(coords)
    w, h = xmax - xmin, ymax - ymin
    if w == 0.0 and h == 0.0:
        return coords[:1].copy()
    if h == 0.0:
        nx, ny = m_target, 1
    elif w == 0.0:
        nx, ny = 1, m_target
    else:
        nx = max(1, int(round(math.sqrt(m_target * w / h))))
        ny = max(1, int(round(m_target / float(nx))))
    grid = regular_grid(nx, ny, (xmin, ymin, xmax, ymax))
    dx = w / (nx - 1) if nx > 1 else 0.0
    dy = h / (ny - 1) if ny > 1 else 0.0
    spacing = max(dx, dy)
    dist, _ = cKDTree(coords).query(grid, k=1)
    keep = dist <= spacing * (1.0 + 1e-9)
    return grid[keep]


@dataclass
class BasisSet:
    """Candidate knots of one partition and the spline design over them.

    Attributes:
        candidate_knots (ndarray): ``(m, 2)`` candidate knot coordinates.
        selected (ndarray): Indices of the knots kept by the lasso.
        design (ndarray): ``(N_k, m)`` spline matrix over all candidates.
    """

    candidate_knots: np.ndarray
    selected: np.ndarray
    design: np.ndarray

    @classmethod
    def build(cls, locations, m_target):
        knots = candidate_knots(locations, m_target)
        return cls(knots, np.arange(knots.shape[0]), tps_matrix(locations, knots))

    @property
    def m(self):
        return self.candidate_knots.shape[0]

    @property
    def selected_knots(self):
        return self.candidate_knots[self.selected]

    @property
    def selected_design(self):
        """Raw spline columns of the selected knots."""
        return self.design[:, self.selected]

    def with_selection(self, selected):
        selected = np.asarray(selected, dtype=int)
        if selected.size and (selected.min() < 0 or selected.max() >= self.m):
            raise ArgumentError('selected', selected, 'indices below {}'.format(self.m))
        return BasisSet(self.candidate_knots, selected, self.design)

    def to_dict(self):
        active = np.zeros(self.m, dtype=bool)
        active[self.selected] = True
        return {'knots': [{'x': float(x), 'y': float(y), 'active': bool(a)}
                          for (x, y), a in zip(self.candidate_knots, active)]}


@dataclass
class LassoFit:
    """Lasso fit at one penalty level, coefficients on the raw column scale.

    Attributes:
        beta (ndarray): Unpenalized fixed effects.
        delta (ndarray): Spline coefficients; inactive entries are exactly 0.
        lam (float): Penalty level of this fit.
        active_set (ndarray): Indices of the nonzero ``delta``.
        truncated (bool): The path stopped early because the working weights
            became non-finite.
        lambda_max (float): Smallest penalty with an empty active set.
        lambdas (ndarray): Penalty levels actually fitted.
        cv_deviance (ndarray): Summed held-out deviance per penalty level, or
            ``None`` when cross-validation was skipped.
    """

    beta: np.ndarray
    delta: np.ndarray
    lam: float
    active_set: np.ndarray
    truncated: bool = False
    lambda_max: float = 0.0
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cv_deviance: np.ndarray = None


class _Standardizer(object):
    """Column scaling of a spline design.

    Columns are centred and scaled to unit variance when ``X`` has an
    intercept column to absorb the shift; otherwise they are only scaled to
    unit root mean square.
    """

    def __init__(self, Phi, X):
        Phi = np.asarray(Phi, dtype=float)
        X = np.asarray(X, dtype=float)
        const = np.flatnonzero((np.ptp(X, axis=0) == 0) & (X[0] != 0)) \
            if X.shape[0] and X.shape[1] else np.zeros(0, dtype=int)
        self.intercept = int(const[0]) if const.size else None
        if self.intercept is not None:
            self.center = Phi.mean(axis=0)
            scale = Phi.std(axis=0)
        else:
            self.center = np.zeros(Phi.shape[1])
            scale = np.sqrt((Phi ** 2).mean(axis=0)) if Phi.shape[0] else np.ones(Phi.shape[1])
        scale[~(scale > 1e-300)] = 1.0
        self.scale = scale
        self.x0 = X[0, self.intercept] if self.intercept is not None else None

    def transform(self, Phi):
        return (np.asarray(Phi, dtype=float) - self.center) / self.scale

    def restore(self, beta, delta_std):
        delta = delta_std / self.scale
        beta = beta.copy()
        if self.intercept is not None:
            beta[self.intercept] -= float(self.center @ delta) / self.x0
        return beta, delta


def soft_threshold(z, lam):
    """``sign(z) * max(|z| - lam, 0)``."""
    return math.copysign(max(abs(z) - lam, 0.0), z)


def weighted_lasso(y, X, Phi, lam, weights, beta=None, delta=None,
                   tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Coordinate descent for a weighted least squares lasso.

    Minimises ``0.5 * sum_i w_i (y_i - X_i beta - Phi_i delta)^2 +
    lam * |delta|_1``. ``beta`` is updated as one exact block between sweeps
    over ``delta``; after each full sweep only the active coordinates are
    cycled until they settle.

    Returns:
        tuple: ``(beta, delta, sweeps)``.

    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    w = np.asarray(weights, dtype=float)
    p, m = X.shape[1], Phi.shape[1]
    beta = np.zeros(p) if beta is None else np.array(beta, dtype=float)
    delta = np.zeros(m) if delta is None else np.array(delta, dtype=float)

    if p:
        XtWX = X.T @ (X * w[:, None])
        try:
            factor = cho_factor(XtWX)
        except LinAlgError:
            raise ConditioningError(int(np.linalg.matrix_rank(XtWX)), p,
                                    ' (weighted fixed-effect block)')
    a = (Phi ** 2 * w[:, None]).sum(axis=0)
    r = y - X @ beta - Phi @ delta

    def beta_step():
        if not p:
            return 0.0
        step = cho_solve(factor, X.T @ (w * r))
        beta[:] += step
        r[:] -= X @ step
        return float(step @ XtWX @ step)

    def sweep(coords):
        change = beta_step()
        for j in coords:
            if a[j] <= 0.0:
                continue
            old = delta[j]
            u = Phi[:, j] @ (w * r) + a[j] * old
            new = soft_threshold(u, lam) / a[j]
            if new != old:
                r[:] -= Phi[:, j] * (new - old)
                delta[j] = new
                change = max(change, a[j] * (new - old) ** 2)
        return change

    sweeps = 0
    everything = range(m)
    while sweeps < max_sweeps:
        sweeps += 1
        if sweep(everything) < tol:
            break
        while sweeps < max_sweeps:
            sweeps += 1
            if sweep(np.flatnonzero(delta)) < tol:
                break
    else:
        logger.warning('[lasso] coordinate descent hit %d sweeps', max_sweeps)
    return beta, delta, sweeps


class _PathBreakdown(Exception):
    pass


def _objective(z, eta, family, lam, delta):
    return -float(np.sum(family.loglik(z, eta))) / len(z) + lam * float(np.abs(delta).sum())


def _penalized_irls(z, X, Phi_s, family, lam, beta, delta):
    """Penalized IRLS at one ``lam``, warm started from ``(beta, delta)``."""
    N = len(z)
    eta = X @ beta + Phi_s @ delta
    obj = _objective(z, eta, family, lam, delta)
    for it in range(1, OUTER_MAX_ITER + 1):
        mu = family.linkinv(eta)
        w = family.variance(mu)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            working = eta + (z - mu) / w
        if not (np.all(np.isfinite(w)) and np.all(w > 0) and np.all(np.isfinite(working))):
            raise _PathBreakdown('non-finite working weights')
        try:
            new_beta, new_delta, _ = weighted_lasso(working, X, Phi_s, lam, w / N,
                                                    beta, delta)
        except ConditioningError:
            raise _PathBreakdown('singular weighted fixed-effect block')
        new_eta = X @ new_beta + Phi_s @ new_delta
        new_obj = _objective(z, new_eta, family, lam, new_delta)
        halvings = 0
        while not new_obj <= obj + 1e-12 * abs(obj) and halvings < 20:
            new_beta = 0.5 * (new_beta + beta)
            new_delta = 0.5 * (new_delta + delta)
            new_eta = X @ new_beta + Phi_s @ new_delta
            new_obj = _objective(z, new_eta, family, lam, new_delta)
            halvings += 1
        if not np.isfinite(new_obj):
            raise _PathBreakdown('objective overflow')
        if family is Family.BERNOULLI and np.max(np.abs(new_eta)) > _SEPARATION_ETA:
            raise _PathBreakdown('fitted probabilities 0 or 1')
        change = max(np.max(np.abs(new_beta - beta), initial=0.0),
                     np.max(np.abs(new_delta - delta), initial=0.0))
        size = max(np.max(np.abs(new_beta), initial=0.0),
                   np.max(np.abs(new_delta), initial=0.0))
        beta, delta, eta, obj = new_beta, new_delta, new_eta, new_obj
        if change <= OUTER_TOL * (1.0 + size):
            break
    return beta, delta


def _glm_start(z, X, family):
    if X.shape[1] == 0:
        return np.zeros(0)
    beta = irls(z, X, family)[0]
    return beta


def _gradient(z, eta, Phi_s, family):
    return Phi_s.T @ (z - family.linkinv(eta)) / len(z)


def _lambda_max(z, X, Phi_s, family, beta0):
    if Phi_s.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(_gradient(z, X @ beta0, Phi_s, family))))


def _fit_path(z, X, Phi_s, family, lambdas, beta0):
    """Warm-started fits along ``lambdas``; stops at the first breakdown."""
    beta, delta = beta0.copy(), np.zeros(Phi_s.shape[1])
    fits = []
    for lam in lambdas:
        try:
            beta, delta = _penalized_irls(z, X, Phi_s, family, lam, beta, delta)
        except _PathBreakdown as exc:
            logger.warning('[lasso] path truncated at lambda=%.4g: %s', lam, exc)
            return fits, True
        fits.append((beta.copy(), delta.copy()))
        logger.debug('[lasso] lambda=%.4g active=%d', lam, np.count_nonzero(delta))
    return fits, False


def default_lambdas(lambda_max, n_lambda=N_LAMBDA, ratio=LAMBDA_RATIO):
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    if not lambda_max > 0.0:
        lambda_max = 1e-12
    return np.geomspace(lambda_max, ratio * lambda_max, n_lambda)


def _select_index(cv_deviance, lambdas):
    cv = np.asarray(cv_deviance, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if cv.size < 2 or cv.shape != lambdas.shape:
        raise ArgumentError('path', cv.size, 'at least 2 points with one deviance each')
    best = np.min(cv)
    if not np.isfinite(best):
        return int(np.argmax(lambdas))
    tied = np.flatnonzero(cv <= best + 1e-12 * max(1.0, abs(best)))
    return int(tied[np.argmax(lambdas[tied])])


def select_lambda(cv_deviance, lambdas):
    """Penalty with the smallest cross-validated deviance.

    Ties go to the larger penalty (the sparser model).
    """
    return float(np.asarray(lambdas)[_select_index(cv_deviance, lambdas)])


def cross_validate(z, X, Phi_s, family, lambdas, n_folds=N_FOLDS, seed=0):
    """Summed held-out deviance per penalty over seeded folds.

    Penalties beyond a fold's truncated path score ``inf``.
    """
    rng = np.random.default_rng(seed)
    folds = rng.permutation(len(z)) % n_folds
    total = np.zeros(len(lambdas))
    for f in range(n_folds):
        test = folds == f
        train = ~test
        beta0 = _glm_start(z[train], X[train], family)
        fits, _ = _fit_path(z[train], X[train], Phi_s[train], family, lambdas, beta0)
        for i in range(len(lambdas)):
            if i >= len(fits):
                total[i] = np.inf
                continue
            beta, delta = fits[i]
            eta = X[test] @ beta + Phi_s[test] @ delta
            with np.errstate(over='ignore', invalid='ignore'):
                dev = family.deviance(z[test], family.linkinv(eta))
            total[i] += dev if np.isfinite(dev) else np.inf
    return total


def _validate_lambdas(lambdas):
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size < 1:
        raise ArgumentError('lambdas', lambdas, 'a non-empty 1-d grid')
    if not np.all(lambdas > 0) or np.any(np.diff(lambdas) >= 0):
        raise ArgumentError('lambdas', lambdas, 'strictly decreasing positive values')
    return lambdas


def _empty_fit(z, X, family):
    beta = _glm_start(z, X, family)
    return LassoFit(beta, np.zeros(0), 0.0, np.zeros(0, dtype=int))


def lasso_path_fit(Z, X, Phi, family, lambdas=None, n_folds=N_FOLDS, seed=0):
    """Lasso path over the spline columns with unpenalized fixed effects.

    The spline columns are standardized, the path is fitted with warm
    starts from the fixed-effect GLM, and the fit at the penalty chosen by
    :func:`select_lambda` on ``n_folds``-fold cross-validated deviance is
    returned with coefficients on the raw column scale.

    Args:
        Z (ndarray): Responses.
        X (ndarray): ``(N, p)`` fixed-effect design, never penalized.
        Phi (ndarray): ``(N, m)`` spline design.
        family (Family): Response family.
        lambdas (ndarray, optional): Strictly decreasing penalties. Default
            :func:`default_lambdas` from ``lambda_max``.
        n_folds (int): Cross-validation folds.
        seed (int): Fold assignment seed.

    Returns:
        LassoFit: Fit at the selected penalty.

    """
    z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    if Phi.shape[0] != z.shape[0] or X.shape[0] != z.shape[0]:
        raise ArgumentError('Phi', Phi.shape, '{} rows'.format(z.shape[0]))
    if Phi.shape[1] == 0:
        return _empty_fit(z, X, family)

    std = _Standardizer(Phi, X)
    Phi_s = std.transform(Phi)
    beta0 = _glm_start(z, X, family)
    lam_max = _lambda_max(z, X, Phi_s, family, beta0)
    lambdas = default_lambdas(lam_max) if lambdas is None else _validate_lambdas(lambdas)

    fits, truncated = _fit_path(z, X, Phi_s, family, lambdas, beta0)
    if not fits:
        beta, delta = beta0, np.zeros(Phi.shape[1])
        chosen, cv = 0, None
    elif len(z) < MIN_CV_OBS or len(fits) < 2:
        logger.warning('[lasso] %d observations: cross-validation skipped, '
                       'using the largest lambda', len(z))
        chosen, cv = 0, None
        beta, delta = fits[0]
    else:
        cv = cross_validate(z, X, Phi_s, family, lambdas[:len(fits)], n_folds, seed)
        chosen = _select_index(cv, lambdas[:len(fits)])
        beta, delta = fits[chosen]

    beta, delta = std.restore(beta, delta)
    active = np.flatnonzero(delta)
    logger.debug('[lasso] lambda_max=%.4g chosen=%.4g active=%d/%d truncated=%s',
                 lam_max, lambdas[chosen], active.size, Phi.shape[1], truncated)
    return LassoFit(beta, delta, float(lambdas[chosen]), active, truncated,
                    lam_max, lambdas[:max(len(fits), 1)], cv)


def penalized_fit(Z, X, Phi, family, lam, n_steps=20):
    """Lasso fit at a single penalty, reached along a short warm-start path."""
    z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    if Phi.shape[1] == 0:
        return _empty_fit(z, X, family)
    std = _Standardizer(Phi, X)
    Phi_s = std.transform(Phi)
    beta0 = _glm_start(z, X, family)
    lam_max = _lambda_max(z, X, Phi_s, family, beta0)
    if lam >= lam_max:
        lambdas = np.array([lam])
    else:
        lambdas = np.geomspace(lam_max, lam, n_steps) if lam > 0 else \
            np.append(np.geomspace(lam_max, lam_max * 1e-6, n_steps), 0.0)
    fits, truncated = _fit_path(z, X, Phi_s, family, lambdas, beta0)
    beta, delta = fits[-1] if fits else (beta0, np.zeros(Phi.shape[1]))
    beta, delta = std.restore(beta, delta)
    return LassoFit(beta, delta, float(lam), np.flatnonzero(delta), truncated,
                    lam_max, lambdas[:len(fits)])


def kkt_gradient(fit, Z, X, Phi, family):
    """Log-likelihood gradient over standardized spline columns, divided by N.

    At a lasso solution it is within ``lam`` in absolute value for inactive
    columns and equals ``lam * sign(delta_j)`` on the active ones.
    """
    z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    std = _Standardizer(Phi, X)
    eta = X @ fit.beta + Phi @ fit.delta
    return _gradient(z, eta, std.transform(Phi), family)


def select_basis(locations, Z, X, family, m_target, seed=0, partition=None):
    """Build the candidate spline basis of one partition and lasso-select it.

    Returns:
        tuple: ``(BasisSet, LassoFit)``; the basis keeps the active knots.

    """
    basis = BasisSet.build(locations, m_target)
    fit = lasso_path_fit(Z, X, basis.design, family, seed=seed)
    logger.info('[lasso] partition=%s knots=%d active=%d lambda=%.4g',
                partition, basis.m, fit.active_set.size, fit.lam)
    return basis.with_selection(fit.active_set), fit
