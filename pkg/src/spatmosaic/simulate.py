# -*- coding: utf-8 -*-
"""
    spatmosaic.simulate
    ~~~~~~~~~~~~~~~~~~~

    Nonstationary non-Gaussian datasets by process convolution.

    White noise ``V`` on a grid of reference locations ``u_j`` is convolved
    with a kernel that varies over space: at ``s`` the kernel is a mixture of
    Gaussian basis kernels ``K_m`` anchored at coarse basis locations ``b_m``,
    mixed with weights ``w_m(s) ~ exp(-|s - b_m| / 2)``::

        W(s) = sum_j sum_m w_m(s) K_m(u_j) V(u_j)

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import Family, SpatialDataset
from .errors import ConfigurationError, SimulationOverflowError
from .util import as_coords, chunks, logger, regular_grid

#: kernel covariances of the nine basis locations, row by row over a 3 x 3 grid
SUPPLEMENT_COVARIANCES = (
    ((0.50, 0.30), (0.30, 0.33)),
    ((0.50, -0.12), (-0.12, 0.13)),
    ((0.50, 0.18), (0.18, 0.20)),
    ((0.50, 0.54), (0.54, 0.60)),
    ((0.50, 0.06), (0.06, 0.07)),
    ((0.50, -0.48), (-0.48, 0.53)),
    ((0.50, 0.42), (0.42, 0.46)),
    ((0.50, -0.36), (-0.36, 0.40)),
    ((0.50, -0.24), (-0.24, 0.26)),
)

COVARIATE_KINDS = ('normal', 'intercept', 'x', 'y')
CENTERINGS = ('basis', 'target')
LAYOUTS = ('grid', 'uniform')
POISSON_ETA_LIMIT = 30.0


def _grid_side(n):
    side = int(round(math.sqrt(n)))
    if side * side != n:
        raise ConfigurationError('{} is not a square number of grid points'.format(n))
    return side


@dataclass
class SimConfig:
    """Everything that determines a simulated dataset.

    Basis and reference locations default to cell-centre grids of 3 x 3 and
    10 x 10 points over the square ``domain``; ``basis_covariances`` default
    to :data:`SUPPLEMENT_COVARIANCES`.

    Attributes:
        kernel_centering (str): ``'basis'`` evaluates each ``K_m`` around its
            own ``b_m``; ``'target'`` translates it to the query location.
        literal_exponent (bool): Use ``Sigma_m`` instead of its inverse in
            the kernel's quadratic form.
        covariance_scale (float): Multiplies every ``Sigma_m``.
        covariates (tuple): Column kinds, each one of
            :data:`COVARIATE_KINDS`; one per entry of ``beta``.
    """

    basis_locations: np.ndarray = None
    basis_covariances: np.ndarray = None
    reference_locations: np.ndarray = None
    noise_sd: float = 1.0
    beta: tuple = (1.0, 1.0)
    family: Family = Family.POISSON
    seed: int = 0
    kernel_centering: str = 'basis'
    literal_exponent: bool = False
    covariance_scale: float = 1.0
    domain: tuple = (0.0, 1.0)
    covariates: tuple = ('normal', 'normal')
    _inverse: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.domain = tuple(float(v) for v in self.domain)
        self.beta = tuple(float(b) for b in self.beta)
        self.covariates = tuple(self.covariates)
        lo, hi = self.domain
        box = (lo, lo, hi, hi)
        if self.basis_locations is None:
            self.basis_locations = regular_grid(3, 3, box, centers=True)
        if self.reference_locations is None:
            self.reference_locations = regular_grid(10, 10, box, centers=True)
        if self.basis_covariances is None:
            self.basis_covariances = SUPPLEMENT_COVARIANCES
        self.basis_locations = as_coords(self.basis_locations)
        self.reference_locations = as_coords(self.reference_locations)
        self.basis_covariances = np.asarray(self.basis_covariances, dtype=float).reshape(-1, 2, 2)
        self.validate()
        cov = self.covariance_scale * self.basis_covariances
        self._inverse = cov if self.literal_exponent else np.linalg.inv(cov)

    def validate(self):
        """Raise :class:`ConfigurationError` for an unusable configuration."""
        lo, hi = self.domain
        if not hi > lo:
            raise ConfigurationError('empty domain', 'domain')
        M, J = self.M, self.J
        if self.basis_covariances.shape[0] != M:
            raise ConfigurationError('{} covariances for {} basis locations'.format(
                self.basis_covariances.shape[0], M), 'basis_covariances')
        if M > J:
            raise ConfigurationError('more basis ({}) than reference ({}) '
                                     'locations'.format(M, J), 'basis_locations')
        if not self.covariance_scale > 0:
            raise ConfigurationError('must be positive', 'covariance_scale')
        for m, sigma in enumerate(self.basis_covariances):
            if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
                raise ConfigurationError('Sigma_{} is not symmetric'.format(m + 1),
                                         'basis_covariances')
            try:
                np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError:
                raise ConfigurationError('Sigma_{} is not positive definite'.format(m + 1),
                                         'basis_covariances')
        if not self.noise_sd >= 0:
            raise ConfigurationError('must be non-negative', 'noise_sd')
        if len(self.beta) != len(self.covariates):
            raise ConfigurationError('{} coefficients for {} covariates'.format(
                len(self.beta), len(self.covariates)), 'beta')
        for kind in self.covariates:
            if kind not in COVARIATE_KINDS:
                raise ConfigurationError("unknown covariate kind '{}'".format(kind),
                                         'covariates')
        if self.kernel_centering not in CENTERINGS:
            raise ConfigurationError("'basis' or 'target'", 'kernel_centering')

    @property
    def M(self):
        return self.basis_locations.shape[0]

    @property
    def J(self):
        return self.reference_locations.shape[0]

    def to_dict(self):
        return {'basis_locations': self.basis_locations.tolist(),
                'basis_covariances': self.basis_covariances.tolist(),
                'reference_locations': self.reference_locations.tolist(),
                'noise_sd': self.noise_sd,
                'beta': list(self.beta),
                'family': self.family.value,
                'seed': int(self.seed),
                'kernel_centering': self.kernel_centering,
                'literal_exponent': bool(self.literal_exponent),
                'covariance_scale': self.covariance_scale,
                'domain': list(self.domain),
                'covariates': list(self.covariates)}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc))

    @classmethod
    def on_grids(cls, n_basis, n_reference, **kwargs):
        """Config with square basis and reference grids of the given sizes."""
        lo, hi = kwargs.get('domain', (0.0, 1.0))
        box = (lo, lo, hi, hi)
        nb, nr = _grid_side(n_basis), _grid_side(n_reference)
        return cls(basis_locations=regular_grid(nb, nb, box, centers=True),
                   reference_locations=regular_grid(nr, nr, box, centers=True),
                   **kwargs)


def _kernel(offsets, m, config):
    """Basis kernel ``m`` at offsets ``x - b_m`` (any leading shape)."""
    sigma = config.covariance_scale * config.basis_covariances[m]
    norm = 1.0 / (2.0 * math.pi * math.sqrt(np.linalg.det(sigma)))
    q = np.einsum('...i,ij,...j->...', offsets, config._inverse[m], offsets)
    return norm * np.exp(-0.5 * q)


def basis_kernel(x, m, config):
    """Gaussian basis kernel ``K_m`` at location ``x``."""
    x = np.asarray(x, dtype=float)
    return float(_kernel(x - config.basis_locations[m], m, config))


def mixture_weights(s, config):
    """``w_m(s)`` for every basis location, rows summing to 1.

    Returns:
        ndarray: ``(n, M)`` for ``n`` locations.

    """
    s = as_coords(s)
    dist = np.sqrt(((s[:, None, :] - config.basis_locations[None, :, :]) ** 2).sum(axis=2))
    logw = -0.5 * (dist - dist.min(axis=1, keepdims=True))
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def _basis_table(config):
    """``A[m, j] = K_m(u_j)``."""
    A = np.empty((config.M, config.J))
    for m in range(config.M):
        A[m] = _kernel(config.reference_locations - config.basis_locations[m], m, config)
    return A


def reference_kernels(s, config):
    """``K_s(u_j)`` for every target ``s`` and reference location ``u_j``.

    Returns:
        ndarray: ``(n, J)``.

    """
    s = as_coords(s)
    w = mixture_weights(s, config)
    if config.kernel_centering == 'basis':
        return w @ _basis_table(config)
    out = np.zeros((s.shape[0], config.J))
    for m in range(config.M):
        offsets = config.reference_locations[None, :, :] - s[:, None, :]
        out += w[:, m, None] * _kernel(offsets, m, config)
    return out


def reference_kernel(s, j, config):
    """Spatially varying kernel ``K_s`` evaluated at reference location ``j``."""
    return float(reference_kernels(s, config)[0, j])


@dataclass
class SimulatedField:
    """Field values at the targets and the white noise that produced them."""

    W: np.ndarray
    V: np.ndarray


def _streams(seed):
    noise, covariates, responses = np.random.SeedSequence(int(seed)).spawn(3)
    return (np.random.default_rng(noise), np.random.default_rng(covariates),
            np.random.default_rng(responses))


def simulate_field(targets, config, V=None, chunk_size=8192):
    """Draw ``V`` once from the config seed and convolve it at every target.

    Args:
        targets (ndarray): ``(n, 2)`` locations.
        config (SimConfig): Simulator configuration.
        V (ndarray, optional): Use this noise instead of drawing it.

    """
    targets = as_coords(targets)
    if V is None:
        V = _streams(config.seed)[0].normal(0.0, config.noise_sd, config.J)
    V = np.asarray(V, dtype=float)
    if config.kernel_centering == 'basis':
        W = mixture_weights(targets, config) @ (_basis_table(config) @ V)
    else:
        pieces = chunks(chunk_size, targets) or [targets]
        W = np.concatenate([reference_kernels(piece, config) @ V for piece in pieces])
    return SimulatedField(W, V)


def make_targets(n, layout='grid', domain=(0.0, 1.0), seed=0):
    """``n`` target locations over the square domain.

    ``'grid'`` lays out cell centres of a ``ceil(sqrt(n))`` wide grid row by
    row and keeps the first ``n``; ``'uniform'`` draws them at random.
    """
    lo, hi = domain
    if n < 1:
        raise ConfigurationError('must be at least 1', 'n')
    if layout == 'grid':
        nx = int(math.ceil(math.sqrt(n)))
        ny = int(math.ceil(n / float(nx)))
        box = (lo, lo, hi, hi)
        grid = regular_grid(nx, ny, box, centers=True)
        return grid[:n]
    if layout == 'uniform':
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
        return rng.uniform(lo, hi, size=(n, 2))
    raise ConfigurationError("'grid' or 'uniform'", 'layout')


def covariate_matrix(targets, kinds, rng):
    """Design matrix with one column per covariate kind."""
    targets = as_coords(targets)
    cols = []
    for kind in kinds:
        if kind == 'normal':
            cols.append(rng.standard_normal(targets.shape[0]))
        elif kind == 'intercept':
            cols.append(np.ones(targets.shape[0]))
        elif kind == 'x':
            cols.append(targets[:, 0].copy())
        elif kind == 'y':
            cols.append(targets[:, 1].copy())
        else:
            raise ConfigurationError("unknown covariate kind '{}'".format(kind),
                                     'covariates')
    return np.column_stack(cols)


def simulate_dataset(targets, config, covariates=None):
    """Simulated SGLMM responses at ``targets``.

    ``eta = X beta + W``; responses are drawn from the config family at the
    inverse link of ``eta``. Covariate kinds default to ``config.covariates``.

    Raises:
        SimulationOverflowError: a Poisson linear predictor exceeds 30.

    """
    targets = as_coords(targets)
    kinds = tuple(config.covariates if covariates is None else covariates)
    if len(kinds) != len(config.beta):
        raise ConfigurationError('{} coefficients for {} covariates'.format(
            len(config.beta), len(kinds)), 'beta')
    _, rng_x, rng_z = _streams(config.seed)
    field_ = simulate_field(targets, config)
    X = covariate_matrix(targets, kinds, rng_x)
    eta = X @ np.asarray(config.beta) + field_.W
    if config.family is Family.POISSON:
        top = float(np.max(eta))
        if top > POISSON_ETA_LIMIT:
            raise SimulationOverflowError(top, POISSON_ETA_LIMIT)
        z = rng_z.poisson(np.exp(eta)).astype(float)
    else:
        z = rng_z.binomial(1, expit(eta)).astype(float)
    names = tuple('cov{}'.format(i + 1) for i in range(len(kinds)))
    meta = {'simulator': config.to_dict(), 'covariate_kinds': list(kinds),
            'field_sd': float(np.std(field_.W))}
    logger.info('[simulate] n=%d family=%s mean response=%.4g field sd=%.4g',
                targets.shape[0], config.family.value, z.mean(), meta['field_sd'])
    return SpatialDataset(targets, z, X, config.family, names, meta)
