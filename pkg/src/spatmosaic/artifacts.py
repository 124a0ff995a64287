# -*- coding: utf-8 -*-
"""
    spatmosaic.artifacts
    ~~~~~~~~~~~~~~~~~~~~

    Files a run leaves behind, one directory per run::

        config.json             effective RunConfig
        train.csv               training rows (validation.csv likewise)
        data.sim.json           simulator config, for simulated inputs
        partition_map.csv       index, x, y, partition of every training row
        partitions/<k>/knots.json     candidate knots with active flags
        partitions/<k>/fit.json       posterior means, selected knots, lasso info
        partitions/<k>/summary.json   posterior summary
        partitions/<k>/draws.bin      every draw (see write_draws)
        beta_map.csv            per-partition centroid and posterior mean beta
        tune.csv                score per gamma
        predictions.csv         validation predictions
        report.json             RunReport

    Floats are written with 17 significant digits so reloading is exact.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import io
import json
import os

import numpy as np
import pandas as pd

from .core import ColumnSchema, Family, load_dataset
from .errors import ArgumentError
from .smoothing import FittedPartition, GlobalPredictor
from .util import logger

FLOAT_FORMAT = '%.17g'
_HEADER = np.dtype('<i8')
_BODY = np.dtype('<f8')


class RunDirectory(object):
    """Paths of one run's artifacts."""

    def __init__(self, root):
        self.root = str(root)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def partition(self, k, name):
        return self.path('partitions', str(int(k)), name)

    def ensure(self, *parts):
        d = self.path(*parts)
        if not os.path.isdir(d):
            os.makedirs(d)
        return d

    def exists(self, *parts):
        return os.path.exists(self.path(*parts))

    def __repr__(self):
        return 'RunDirectory({!r})'.format(self.root)


def write_json(path, obj):
    parent = os.path.dirname(path)
    if parent and not os.path.isdir(parent):
        os.makedirs(parent)
    with io.open(path, 'w', encoding='utf-8') as fp:
        json.dump(obj, fp, indent=2, sort_keys=True, allow_nan=True)
        fp.write(u'\n')


def read_json(path):
    with io.open(path, encoding='utf-8') as fp:
        return json.load(fp)


def _write_frame(frame, path):
    parent = os.path.dirname(path)
    if parent and not os.path.isdir(parent):
        os.makedirs(parent)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def dataset_frame(data, x='x', y='y', z='z'):
    frame = pd.DataFrame({x: data.coords[:, 0], y: data.coords[:, 1], z: data.z})
    for j, name in enumerate(data.covariate_names):
        frame[name] = data.X[:, j]
    return frame


def write_dataset(data, path):
    """CSV in the layout :func:`load_dataset` reads, plus a simulator sidecar."""
    _write_frame(dataset_frame(data), path)
    if 'simulator' in data.metadata:
        stem = os.path.splitext(path)[0]
        write_json(stem + '.sim.json', {'simulator': data.metadata['simulator'],
                                        'covariate_kinds': data.metadata.get('covariate_kinds')})
    logger.info('[artifacts] wrote %d rows to %s', data.n, path)


def read_dataset(path, family, covariates):
    return load_dataset(path, ColumnSchema('x', 'y', 'z', tuple(covariates)), family)


def write_partition_map(path, coords, labels):
    _write_frame(pd.DataFrame({'index': np.arange(len(labels)),
                               'x': coords[:, 0], 'y': coords[:, 1],
                               'partition': np.asarray(labels, dtype=int)}), path)


def read_partition_map(path):
    frame = pd.read_csv(path)
    return frame['partition'].to_numpy(int)


def write_draws(path, samples):
    """Binary dump: little-endian int64 header ``S, p, m``, then the draws as
    little-endian float64, row-major."""
    parent = os.path.dirname(path)
    if parent and not os.path.isdir(parent):
        os.makedirs(parent)
    header = np.array([samples.S, samples.p, samples.m], dtype=_HEADER)
    with io.open(path, 'wb') as fp:
        fp.write(header.tobytes())
        fp.write(np.ascontiguousarray(samples.draws, dtype=_BODY).tobytes())


def read_draws(path):
    """Returns ``(draws, p, m)``."""
    with io.open(path, 'rb') as fp:
        raw = fp.read()
    S, p, m = np.frombuffer(raw[:3 * _HEADER.itemsize], dtype=_HEADER)
    draws = np.frombuffer(raw[3 * _HEADER.itemsize:], dtype=_BODY)
    if draws.size != S * (p + m + 1):
        raise ArgumentError('draw file', path,
                            '{} values after the header'.format(S * (p + m + 1)))
    return draws.reshape(int(S), int(p + m + 1)).copy(), int(p), int(m)


def write_partition_fit(run, k, basis, lasso, samples, summary, members):
    """Every per-partition artifact of the fit stage."""
    active = basis.to_dict()
    active['partition'] = int(k)
    write_json(run.partition(k, 'knots.json'), active)
    beta, delta = samples.posterior_mean()
    write_json(run.partition(k, 'fit.json'), {
        'partition': int(k),
        'n_obs': int(members.shape[0]),
        'burn_in': int(samples.burn_in),
        'knots': basis.selected_knots.tolist(),
        'beta_mean': beta.tolist(),
        'delta_mean': delta.tolist(),
        'lasso': {'lambda': lasso.lam, 'lambda_max': lasso.lambda_max,
                  'truncated': bool(lasso.truncated),
                  'beta': lasso.beta.tolist(),
                  'active': lasso.active_set.tolist()},
        'acceptance_rate': samples.acceptance_rate,
        'burn_in_acceptance': samples.burn_in_acceptance,
        'short_chain': bool(samples.short_chain),
        'seed': int(samples.seed),
        'proposal_scale_trace': samples.proposal_scale_trace.tolist(),
    })
    write_json(run.partition(k, 'summary.json'), summary.to_dict(int(k)))
    write_draws(run.partition(k, 'draws.bin'), samples)


def write_beta_map(path, rows):
    """``rows``: dicts with partition, centroid and posterior summaries."""
    _write_frame(pd.DataFrame(rows), path)


def write_predictions(path, frame):
    _write_frame(frame, path)


def write_surface(path, coords, values):
    _write_frame(pd.DataFrame({'x': coords[:, 0], 'y': coords[:, 1],
                               'value': values}), path)


def write_scores(path, table):
    _write_frame(table, path)


def load_predictor(out_dir, gamma=None, max_draws=None):
    """Rebuild the fitted :class:`GlobalPredictor` of a run directory.

    Uses the training CSV, the partition map and each partition's
    ``fit.json``; with ``max_draws`` the retained draws are read back from
    ``draws.bin`` and thinned.

    Returns:
        tuple: ``(predictor, config dict)``.

    """
    run = RunDirectory(out_dir)
    config = read_json(run.path('config.json'))
    family = Family.parse(config['family'])
    header = pd.read_csv(run.path('train.csv'), nrows=0).columns
    covariates = [c for c in header if c not in ('x', 'y', 'z')]
    train = read_dataset(run.path('train.csv'), family, covariates)
    labels = read_partition_map(run.path('partition_map.csv'))
    if labels.shape[0] != train.n:
        raise ArgumentError('partition map', labels.shape[0],
                            '{} rows to match train.csv'.format(train.n))
    parts = []
    for k in range(int(labels.max()) + 1):
        fit = read_json(run.partition(k, 'fit.json'))
        members = train.coords[labels == k]
        part = FittedPartition(k, members, np.asarray(fit['knots']).reshape(-1, 2),
                               np.asarray(fit['beta_mean']), np.asarray(fit['delta_mean']))
        if max_draws:
            draws, p, m = read_draws(run.partition(k, 'draws.bin'))
            kept = draws[fit['burn_in']:]
            pick = np.unique(np.linspace(0, kept.shape[0] - 1,
                                         min(max_draws, kept.shape[0])).astype(int))
            part.beta_draws = kept[pick, :p]
            part.delta_draws = kept[pick, p:p + m]
        parts.append(part)
    if gamma is None and run.exists('report.json'):
        gamma = read_json(run.path('report.json')).get('chosen_gamma')
    if gamma is None:
        gamma = config['gammas'][0]
    logger.info('[artifacts] loaded %d partitions from %s', len(parts), out_dir)
    return GlobalPredictor(parts, gamma, family), config
