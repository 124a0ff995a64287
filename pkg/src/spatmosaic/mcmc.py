# -*- coding: utf-8 -*-
"""
    spatmosaic.mcmc
    ~~~~~~~~~~~~~~~

    Bayesian fit of one partition's basis-expansion GLMM by adaptive block
    random-walk Metropolis over ``(beta, delta, log sigma2)``.

    The local model is::

        Z_i | eta_i ~ family(g^-1(eta_i)),   eta = X beta + Phi delta
        delta | sigma2 ~ N(0, sigma2 I),   beta ~ N(0, 100 I),
        sigma2 ~ IG(0.5, 2000)

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky
from scipy.special import gammaln

from .core import irls
from .errors import ArgumentError
from .util import logger

BATCH_SIZE = 50
TARGET_ACCEPTANCE = 0.234
MAX_LOG_STEP = 0.01
#: batches between re-estimates of the proposal covariance during burn-in
COV_UPDATE_BATCHES = 10
MIN_RELIABLE_ITERS = 1000
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Priors:
    beta_var: float = 100.0
    sigma2_shape: float = 0.5
    sigma2_scale: float = 2000.0

    def __post_init__(self):
        for name in ('beta_var', 'sigma2_shape', 'sigma2_scale'):
            if not getattr(self, name) > 0:
                raise ArgumentError(name, getattr(self, name), 'a positive number')


@dataclass
class LocalModel:
    """Data and priors of one partition's local model.

    ``Phi`` holds only the selected spline columns and may have zero columns,
    in which case the model is a Bayesian GLM with an idle ``sigma2``.
    """

    Z: np.ndarray
    X: np.ndarray
    Phi: np.ndarray
    family: object
    priors: Priors = field(default_factory=Priors)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.Phi = np.asarray(self.Phi, dtype=float).reshape(self.Z.shape[0], -1)
        n = self.Z.shape[0]
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ArgumentError('X', self.X.shape, '({}, p)'.format(n))
        for name in ('Z', 'X', 'Phi'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ArgumentError(name, 'non-finite', 'finite values')
        self.design = np.hstack([self.X, self.Phi])

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Phi.shape[1]

    @property
    def dim(self):
        return self.p + self.m + 1

    def parameter_names(self):
        return (['beta[{}]'.format(i) for i in range(self.p)]
                + ['delta[{}]'.format(j) for j in range(self.m)] + ['sigma2'])


@dataclass
class ChainState:
    beta: np.ndarray
    delta: np.ndarray
    log_sigma2: float
    log_post: float = float('nan')

    def vector(self):
        return np.concatenate([self.beta, self.delta, [self.log_sigma2]])

    @classmethod
    def from_vector(cls, v, p, log_post=float('nan')):
        v = np.asarray(v, dtype=float)
        return cls(v[:p].copy(), v[p:-1].copy(), float(v[-1]), log_post)

    @classmethod
    def initial(cls, model, beta, delta):
        beta = np.asarray(beta, dtype=float)
        delta = np.asarray(delta, dtype=float)
        if beta.shape != (model.p,) or delta.shape != (model.m,):
            raise ArgumentError('initial state', (beta.shape, delta.shape),
                                'shapes ({},) and ({},)'.format(model.p, model.m))
        sigma2 = (float(np.var(delta)) if delta.size else 0.0) + 0.01
        state = cls(beta.copy(), delta.copy(), math.log(sigma2))
        state.log_post = log_posterior(state, model)
        return state


def _log_post_vector(v, model):
    p, m = model.p, model.m
    pr = model.priors
    log_s2 = v[-1]
    if not np.all(np.isfinite(v)):
        return -np.inf
    with np.errstate(over='ignore', invalid='ignore'):
        eta = model.design @ v[:-1]
        ll = float(np.sum(model.family.loglik(model.Z, eta)))
    if not np.isfinite(ll):
        return -np.inf
    beta, delta = v[:p], v[p:p + m]
    lp_beta = (-0.5 * p * (_LOG_2PI + math.log(pr.beta_var))
               - float(beta @ beta) / (2.0 * pr.beta_var))
    sigma2 = math.exp(log_s2) if log_s2 < 700 else math.inf
    if sigma2 == 0.0 or not np.isfinite(sigma2):
        return -np.inf
    lp_delta = -0.5 * m * (_LOG_2PI + log_s2) - float(delta @ delta) / (2.0 * sigma2)
    a, b = pr.sigma2_shape, pr.sigma2_scale
    lp_sigma2 = a * math.log(b) - float(gammaln(a)) - (a + 1.0) * log_s2 - b / sigma2
    # d sigma2 / d log sigma2
    jacobian = log_s2
    total = ll + lp_beta + lp_delta + lp_sigma2 + jacobian
    return total if np.isfinite(total) else -np.inf


def log_posterior(state, model):
    """Unnormalized log posterior of a chain state, ``-inf`` when undefined.

    Sum of the family log-likelihood at ``X beta + Phi delta``, the normal
    prior on ``beta``, the ``N(0, sigma2 I)`` density of ``delta``, the
    inverse-gamma density of ``sigma2`` and the log Jacobian of sampling
    ``log sigma2``.
    """
    if state.beta.shape != (model.p,) or state.delta.shape != (model.m,):
        raise ArgumentError('state', (state.beta.shape, state.delta.shape),
                            'shapes ({},) and ({},)'.format(model.p, model.m))
    return _log_post_vector(state.vector(), model)


def adapt_proposal(batch_accepts, batch_index, current_scale,
                   batch_size=BATCH_SIZE, target=TARGET_ACCEPTANCE):
    """Log-adaptive update of the proposal scale after one batch.

    ``log(scale) += sign(rate - target) * min(0.01, batch_index ** -0.5)``
    where ``rate`` is the batch's acceptance rate. ``batch_accepts`` may be
    the full history of per-batch counts, in which case the last is used.
    """
    if batch_index < 1:
        raise ArgumentError('batch_index', batch_index, 'at least 1')
    accepts = np.atleast_1d(batch_accepts)[-1]
    rate = float(accepts) / batch_size
    step = min(MAX_LOG_STEP, batch_index ** -0.5)
    return current_scale * math.exp(np.sign(rate - target) * step)


class BlockMetropolis(object):
    """Random-walk Metropolis over one joint block with scale adaptation.

    Proposals are ``v + scale * chol @ z`` with ``z`` standard normal. During
    burn-in the scale is adapted after every batch and ``chol`` is
    re-estimated from the burn-in draws every :data:`COV_UPDATE_BATCHES`
    batches; afterwards both are frozen.

    Args:
        log_density (callable): Vector -> unnormalized log density.
        dim (int): Block dimension.
        scale (float): Initial proposal scale, default ``2.38 / sqrt(dim)``.
        chol (ndarray): Lower-triangular proposal shape, default identity.
    """

    def __init__(self, log_density, dim, scale=None, chol=None,
                 batch_size=BATCH_SIZE, target=TARGET_ACCEPTANCE):
        self.log_density = log_density
        self.dim = int(dim)
        self.scale = 2.38 / math.sqrt(dim) if scale is None else float(scale)
        self.chol = np.eye(dim) if chol is None else np.asarray(chol, dtype=float)
        if not self.scale > 0:
            raise ArgumentError('proposal_scale', self.scale, 'a positive number')
        if self.chol.shape != (dim, dim) or not np.all(np.diag(self.chol) > 0):
            raise ArgumentError('chol_cov', self.chol.shape,
                                'lower-triangular ({0}, {0}) with positive diagonal'.format(dim))
        self.batch_size = int(batch_size)
        self.target = target

    def step(self, v, lp, rng):
        """One Metropolis step; returns ``(v', lp', accepted)``."""
        proposal = v + self.scale * (self.chol @ rng.standard_normal(self.dim))
        lp_new = self.log_density(proposal)
        # u in (0, 1]; nan and -inf differences reject
        u = 1.0 - rng.uniform()
        if math.log(u) <= lp_new - lp:
            return proposal, lp_new, True
        return v, lp, False

    def _reestimate(self, draws):
        cov = np.atleast_2d(np.cov(draws, rowvar=False))
        jitter = 1e-10 * np.maximum(np.diag(cov), 1e-12)
        try:
            self.chol = cholesky(cov + np.diag(jitter), lower=True)
        except LinAlgError:
            logger.debug('[mcmc] proposal covariance not positive definite; kept')

    def run(self, init, iters, burn_in, rng):
        """Run the chain from ``init``.

        Returns:
            tuple: ``(draws, accepted, scale_trace)``; ``draws`` holds every
            iteration, ``accepted`` is a boolean per iteration and
            ``scale_trace`` the scale after each completed batch.

        """
        v = np.asarray(init, dtype=float).copy()
        lp = self.log_density(v)
        draws = np.empty((iters, self.dim))
        accepted = np.zeros(iters, dtype=bool)
        trace = []
        batch_accepts = 0
        batch = 0
        for i in range(iters):
            v, lp, acc = self.step(v, lp, rng)
            draws[i] = v
            accepted[i] = acc
            batch_accepts += acc
            if (i + 1) % self.batch_size == 0:
                batch += 1
                if i < burn_in:
                    self.scale = adapt_proposal(batch_accepts, batch, self.scale,
                                                self.batch_size, self.target)
                    if batch % COV_UPDATE_BATCHES == 0 and i + 1 > 2 * self.dim:
                        self._reestimate(draws[:i + 1])
                trace.append(self.scale)
                batch_accepts = 0
        return draws, accepted, np.asarray(trace)


def rwm_block_step(state, model, proposal_scale, chol_cov, rng):
    """One joint random-walk Metropolis step on a :class:`ChainState`.

    Returns:
        tuple: ``(state', accepted)``; a rejected proposal returns ``state``.

    """
    sampler = BlockMetropolis(lambda v: _log_post_vector(v, model), model.dim,
                              proposal_scale, chol_cov)
    lp = log_posterior(state, model) if math.isnan(state.log_post) else state.log_post
    v, lp_new, acc = sampler.step(state.vector(), lp, rng)
    if not acc:
        return state, False
    return ChainState.from_vector(v, model.p, lp_new), True


def laplace_chol(model, state):
    """Cholesky factor of the inverse negative Hessian at ``state``.

    The ``(beta, delta)`` block uses the GLM Fisher information plus the
    prior precisions; ``log sigma2`` gets variance ``2 / (m + 1)``.
    """
    p, m = model.p, model.m
    with np.errstate(over='ignore'):
        mu = model.family.linkinv(np.clip(model.design @ np.concatenate([state.beta, state.delta]),
                                          -30.0, 30.0))
    w = model.family.variance(mu)
    H = model.design.T @ (model.design * w[:, None])
    prec = np.concatenate([np.full(p, 1.0 / model.priors.beta_var),
                           np.full(m, math.exp(-state.log_sigma2))])
    H[np.diag_indices_from(H)] += prec
    chol = np.zeros((model.dim, model.dim))
    chol[-1, -1] = math.sqrt(2.0 / (m + 1.0))
    if p + m == 0:
        return chol
    try:
        factor = cho_factor(H, lower=True)
        cov = cho_solve(factor, np.eye(p + m))
        chol[:-1, :-1] = cholesky(0.5 * (cov + cov.T), lower=True)
    except LinAlgError:
        logger.warning('[mcmc] Laplace covariance singular; identity proposal used')
        chol[:-1, :-1] = 0.1 * np.eye(p + m)
    return chol


@dataclass
class PosteriorSamples:
    """Every iteration of one chain.

    Attributes:
        draws (ndarray): ``S x (p + m + 1)``; columns ``beta``, ``delta`` and
            ``sigma2`` on its natural scale.
        acceptance_rate (float): Acceptance rate after burn-in.
        proposal_scale_trace (ndarray): Proposal scale after every batch.
        seed (int): Chain seed.
        p (int): Fixed effects.
        m (int): Selected spline coefficients.
        burn_in (int): Iterations of adaptation.
        burn_in_acceptance (float): Acceptance rate during burn-in.
        short_chain (bool): Fewer iterations than summaries can trust.
    """

    draws: np.ndarray
    acceptance_rate: float
    proposal_scale_trace: np.ndarray
    seed: int
    p: int
    m: int
    burn_in: int = 0
    burn_in_acceptance: float = float('nan')
    short_chain: bool = False

    @property
    def S(self):
        return self.draws.shape[0]

    @property
    def beta(self):
        return self.draws[:, :self.p]

    @property
    def delta(self):
        return self.draws[:, self.p:self.p + self.m]

    @property
    def sigma2(self):
        return self.draws[:, -1]

    def retained(self, burn_in=None):
        burn_in = self.burn_in if burn_in is None else burn_in
        return self.draws[burn_in:]

    def posterior_mean(self, burn_in=None):
        """Posterior means as ``(beta, delta)``."""
        mean = self.retained(burn_in).mean(axis=0)
        return mean[:self.p], mean[self.p:self.p + self.m]


def _initial_values(model, init):
    if init is None:
        beta = irls(model.Z, model.X, model.family)[0] if model.p else np.zeros(0)
        return beta, np.zeros(model.m)
    if isinstance(init, ChainState):
        return init.beta, init.delta
    if hasattr(init, 'beta') and hasattr(init, 'delta'):
        delta = np.asarray(init.delta, dtype=float)
        if delta.shape != (model.m,):
            delta = delta[np.asarray(init.active_set, dtype=int)]
        return init.beta, delta
    beta, delta = init
    return beta, delta


def run_chain(model, iters, burn_in=None, seed=0, init=None):
    """Adaptive block random-walk Metropolis chain for one local model.

    Args:
        model (LocalModel): Partition data and priors.
        iters (int): Total iterations ``S``, burn-in included.
        burn_in (int, optional): Adaptation period, default ``iters // 2``.
        seed (int): Seed of this chain's generator.
        init: Starting ``(beta, delta)``; a :class:`LassoFit` (its
            ``delta`` restricted to the active set), a :class:`ChainState`
            or a tuple. Default the GLM estimate with ``delta = 0``.

    Returns:
        PosteriorSamples: All ``iters`` draws. The same seed gives
        bitwise-identical draws.

    """
    if iters < 1:
        raise ArgumentError('iters', iters, 'at least 1')
    burn_in = iters // 2 if burn_in is None else int(burn_in)
    if not 0 <= burn_in < iters:
        raise ArgumentError('burn_in', burn_in, 'in [0, {})'.format(iters))
    short = iters < MIN_RELIABLE_ITERS
    if short:
        logger.warning('[mcmc] %d iterations: posterior summaries unreliable', iters)

    state = ChainState.initial(model, *_initial_values(model, init))
    if not np.isfinite(state.log_post):
        logger.warning('[mcmc] initial state has log posterior %s; starting at GLM',
                       state.log_post)
        state = ChainState.initial(model, *_initial_values(model, None))
    rng = np.random.default_rng(seed)
    sampler = BlockMetropolis(lambda v: _log_post_vector(v, model), model.dim,
                              chol=laplace_chol(model, state))
    draws, accepted, trace = sampler.run(state.vector(), iters, burn_in, rng)
    draws[:, -1] = np.exp(draws[:, -1])

    post_rate = float(accepted[burn_in:].mean())
    burn_rate = float(accepted[:burn_in].mean()) if burn_in else float('nan')
    logger.debug('[mcmc] seed=%d dim=%d acceptance=%.3f final scale=%.4g',
                 seed, model.dim, post_rate, sampler.scale)
    return PosteriorSamples(draws, post_rate, trace, int(seed), model.p, model.m,
                            burn_in, burn_rate, short)


@dataclass
class PosteriorSummary:
    """Posterior mean and central 95% interval per parameter."""

    names: list
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    p: int
    m: int
    acceptance_rate: float = float('nan')

    def to_dict(self, partition=None):
        def entries(sl):
            return [{'mean': float(a), 'lo': float(b), 'hi': float(c)}
                    for a, b, c in zip(self.mean[sl], self.lo[sl], self.hi[sl])]
        return {'partition': partition,
                'beta': entries(slice(0, self.p)),
                'delta': entries(slice(self.p, self.p + self.m)),
                'sigma2': entries(slice(-1, None))[0],
                'acceptance_rate': self.acceptance_rate}


def posterior_summary(samples, burn_in=None):
    """Mean and 2.5% / 97.5% quantiles of every parameter after burn-in."""
    burn_in = samples.burn_in if burn_in is None else int(burn_in)
    if not 0 <= burn_in < samples.S:
        raise ArgumentError('burn_in', burn_in, 'in [0, {})'.format(samples.S))
    kept = samples.draws[burn_in:]
    lo, hi = np.quantile(kept, [0.025, 0.975], axis=0)
    names = (['beta[{}]'.format(i) for i in range(samples.p)]
             + ['delta[{}]'.format(j) for j in range(samples.m)] + ['sigma2'])
    return PosteriorSummary(names, kept.mean(axis=0), lo, hi, samples.p, samples.m,
                            samples.acceptance_rate)
