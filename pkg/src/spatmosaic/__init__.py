# -*- coding: utf-8 -*-
"""
    spatmosaic
    ~~~~~~~~~~

    spatmosaic fits spatial generalized linear mixed models to large,
    nonstationary point-referenced datasets. The domain is partitioned by
    clustering residuals of a plain GLM, each partition gets its own
    lasso-selected thin plate spline basis and an MCMC fit, and the local
    fits are blended back into one global surface.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

from .basis import BasisSet, LassoFit, select_basis, tps_matrix
from .clustering import Adjacency, Lattice, Partitioning, partition_domain
from .config import RunConfig, load_run_config
from .core import (ColumnSchema, Family, GlmFit, Location, SpatialDataset,
                   fit_glm, load_dataset, split_holdout)
from .errors import (ArgumentError, ConditioningError, ConfigurationError,
                     DegenerateGeometryError, InfeasiblePartitionError,
                     NumericalError, SchemaError, SimulationOverflowError,
                     SpatMosaicError, StageError, ValidationError)
from .mcmc import LocalModel, PosteriorSamples, run_chain
from .pipeline import RunReport, run_pipeline, sweep_K
from .simulate import SimConfig, simulate_dataset
from .smoothing import GlobalPredictor, tune_gamma
from .util import logger

__version__ = '0.1.0'


def test():
    """Run all tests.

    :return: a :class:`unittest.TestResult` object
    """
    from .testsuite import run
    return run()
