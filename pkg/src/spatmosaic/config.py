# -*- coding: utf-8 -*-
"""
    spatmosaic.config
    ~~~~~~~~~~~~~~~~~

    Run settings. Module-level defaults come from ``SMB_*`` environment
    variables; a run file of ``key = value`` lines overrides them and
    command-line flags override the file.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import io
import os
from dataclasses import asdict, dataclass, field, fields

from .core import RESIDUAL_KINDS, ColumnSchema, Family
from .errors import ConfigurationError
from .simulate import CENTERINGS, LAYOUTS, SimConfig


def parse_floats(value):
    """``'0.1, 0.25'`` -> ``(0.1, 0.25)``."""
    return tuple(float(v) for v in str(value).replace(';', ',').split(',') if v.strip())


def parse_ints(value):
    return tuple(int(v) for v in str(value).replace(';', ',').split(',') if v.strip())


def parse_names(value):
    return tuple(v.strip() for v in str(value).split(',') if v.strip())


def parse_bool(value):
    value = str(value).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError('not a boolean: {!r}'.format(value))


def parse_optional_int(value):
    """``'none'`` or empty -> ``None``, otherwise an int."""
    if value is None or str(value).strip().lower() in ('', 'none'):
        return None
    return int(value)


class _Unset(object):

    def __repr__(self):
        return 'UNSET'


#: override value meaning "not given"; ``None`` is an ordinary value
UNSET = _Unset()


# ----------------------------------------------------------------------
# Partitioning and basis selection
# ----------------------------------------------------------------------
DEFAULT_K = int(os.getenv('SMB_K') or '9')
DEFAULT_LATTICE = int(os.getenv('SMB_LATTICE') or '900')
DEFAULT_KNOTS = int(os.getenv('SMB_KNOTS') or '100')
DEFAULT_RESIDUAL = os.getenv('SMB_RESIDUAL') or 'deviance'

# ----------------------------------------------------------------------
# MCMC
# ----------------------------------------------------------------------
DEFAULT_ITERS = int(os.getenv('SMB_ITERS') or '20000')
# None means half of the iterations
DEFAULT_BURN_IN = parse_optional_int(os.getenv('SMB_BURN_IN'))

# ----------------------------------------------------------------------
# Smoothing and evaluation
# ----------------------------------------------------------------------
DEFAULT_GAMMAS = parse_floats(os.getenv('SMB_GAMMAS') or '0.1, 0.25, 0.5, 1')
DEFAULT_HOLDOUT = float(os.getenv('SMB_HOLDOUT') or '0.2')
DEFAULT_MAX_DRAWS = 200

# ----------------------------------------------------------------------
# Run
# ----------------------------------------------------------------------
DEFAULT_SEED = int(os.getenv('SMB_SEED') or '0')
DEFAULT_WORKERS = int(os.getenv('SMB_WORKERS') or str(os.cpu_count() or 1))
DEFAULT_OUT = os.getenv('SMB_OUT') or 'smb-out'

CONFIG_FILENAME = 'config.json'


@dataclass
class RunConfig:
    """Every knob of a pipeline run.

    Either ``data_path`` names an input CSV or, when it is empty, a dataset
    of ``sim_n`` locations is simulated.
    """

    # input
    data_path: str = ''
    x: str = 'x'
    y: str = 'y'
    z: str = 'z'
    covariates: tuple = ('cov1', 'cov2')
    family: str = 'poisson'
    # simulation
    sim_n: int = 10000
    sim_layout: str = 'grid'
    sim_noise_sd: float = 1.0
    sim_beta: tuple = (1.0, 1.0)
    sim_covariates: tuple = ('normal', 'normal')
    sim_kernel_centering: str = 'basis'
    sim_literal_exponent: bool = False
    sim_covariance_scale: float = 1.0
    # partitioning
    K: int = DEFAULT_K
    K_candidates: tuple = ()
    lattice: int = DEFAULT_LATTICE
    residual: str = DEFAULT_RESIDUAL
    # basis selection
    knots: int = DEFAULT_KNOTS
    # mcmc
    iters: int = DEFAULT_ITERS
    burn_in: int = DEFAULT_BURN_IN
    # smoothing
    gammas: tuple = field(default_factory=lambda: DEFAULT_GAMMAS)
    max_draws: int = DEFAULT_MAX_DRAWS
    intervals: bool = False
    # run
    holdout: float = DEFAULT_HOLDOUT
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS
    out: str = DEFAULT_OUT

    def validate(self):
        """Raise :class:`ConfigurationError` on the first bad setting."""
        def bad(key, msg):
            raise ConfigurationError(msg, key)

        try:
            Family.parse(self.family)
        except Exception:
            bad('family', "'poisson' or 'bernoulli'")
        if self.K < 1:
            bad('cluster.K', 'must be at least 1')
        if any(k < 1 for k in self.K_candidates):
            bad('cluster.sweep', 'candidates must be at least 1')
        if self.lattice < 2:
            bad('cluster.lattice', 'must be at least 2')
        if self.residual not in RESIDUAL_KINDS:
            bad('glm.residual', ' or '.join(RESIDUAL_KINDS))
        if self.knots < 1:
            bad('basis.knots', 'must be at least 1')
        if self.iters < 1:
            bad('mcmc.iters', 'must be at least 1')
        if self.burn_in is not None and not 0 <= self.burn_in < self.iters:
            bad('mcmc.burn_in', 'must lie in [0, mcmc.iters)')
        if not self.gammas or any(not g > 0 for g in self.gammas):
            bad('smoothing.gammas', 'need at least one positive radius')
        if self.max_draws < 1:
            bad('smoothing.max_draws', 'must be at least 1')
        if not 0.0 < self.holdout < 1.0:
            bad('holdout', 'must lie in (0, 1)')
        if self.workers < 1:
            bad('workers', 'must be at least 1')
        if not self.data_path:
            if self.sim_n < 2:
                bad('sim.n', 'must be at least 2')
            if self.sim_layout not in LAYOUTS:
                bad('sim.layout', "'grid' or 'uniform'")
            if self.sim_kernel_centering not in CENTERINGS:
                bad('sim.kernel_centering', "'basis' or 'target'")
        return self

    @property
    def effective_burn_in(self):
        return self.iters // 2 if self.burn_in is None else self.burn_in

    @property
    def family_enum(self):
        return Family.parse(self.family)

    def schema(self):
        return ColumnSchema(self.x, self.y, self.z, tuple(self.covariates))

    def sim_config(self):
        return SimConfig(noise_sd=self.sim_noise_sd, beta=self.sim_beta,
                         family=self.family, seed=self.seed,
                         kernel_centering=self.sim_kernel_centering,
                         literal_exponent=self.sim_literal_exponent,
                         covariance_scale=self.sim_covariance_scale,
                         covariates=self.sim_covariates)

    def to_dict(self):
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigurationError('unknown settings: ' + ', '.join(unknown))
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d).validate()

    def replace(self, **overrides):
        """Copy with every override applied except those left :data:`UNSET`.

        ``None`` is applied like any other value, so ``burn_in=None`` returns
        to half of the iterations.
        """
        d = asdict(self)
        d.update({k: v for k, v in overrides.items() if v is not UNSET})
        return RunConfig.from_dict(d)


#: run-file key -> (RunConfig field, parser)
RUN_KEYS = {
    'data.path': ('data_path', str),
    'data.x': ('x', str),
    'data.y': ('y', str),
    'data.z': ('z', str),
    'data.covariates': ('covariates', parse_names),
    'data.family': ('family', str),
    'family': ('family', str),
    'sim.n': ('sim_n', int),
    'sim.layout': ('sim_layout', str),
    'sim.noise_sd': ('sim_noise_sd', float),
    'sim.beta': ('sim_beta', parse_floats),
    'sim.covariates': ('sim_covariates', parse_names),
    'sim.kernel_centering': ('sim_kernel_centering', str),
    'sim.literal_exponent': ('sim_literal_exponent', parse_bool),
    'sim.covariance_scale': ('sim_covariance_scale', float),
    'cluster.K': ('K', int),
    'cluster.sweep': ('K_candidates', parse_ints),
    'cluster.lattice': ('lattice', int),
    'glm.residual': ('residual', str),
    'basis.knots': ('knots', int),
    'mcmc.iters': ('iters', int),
    'mcmc.burn_in': ('burn_in', parse_optional_int),
    'smoothing.gammas': ('gammas', parse_floats),
    'smoothing.max_draws': ('max_draws', int),
    'smoothing.intervals': ('intervals', parse_bool),
    'holdout': ('holdout', float),
    'seed': ('seed', int),
    'workers': ('workers', int),
    'out': ('out', str),
}


def parse_run_file(lines, filename=None):
    """Settings from ``key = value`` lines.

    Blank lines and ``#`` comments are skipped.

    Returns:
        dict: RunConfig field name -> parsed value.

    """
    if isinstance(lines, str):
        lines = io.StringIO(lines)
    settings = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError("expected 'key = value'", None,
                                     filename or '<string>', lineno)
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in RUN_KEYS:
            raise ConfigurationError('unknown setting', key,
                                     filename or '<string>', lineno)
        name, parser = RUN_KEYS[key]
        try:
            settings[name] = parser(value)
        except ValueError as exc:
            raise ConfigurationError(str(exc), key, filename or '<string>', lineno)
    return settings


def load_run_config(path=None, overrides=None):
    """Environment defaults, then the run file at ``path``, then ``overrides``.

    Args:
        path (str, optional): Run file.
        overrides (dict, optional): RunConfig field name -> value;
            :data:`UNSET` values are ignored.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigurationError: Unreadable file, unknown key or invalid value.

    """
    config = RunConfig()
    if path:
        try:
            with io.open(path, encoding='utf-8') as fp:
                settings = parse_run_file(fp, str(path))
        except (IOError, OSError) as exc:
            raise ConfigurationError('cannot read run file: {}'.format(exc), None, str(path))
        config = config.replace(**settings)
    return config.replace(**(overrides or {})).validate()
