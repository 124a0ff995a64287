# -*- coding: utf-8 -*-
"""
    spatmosaic.pipeline
    ~~~~~~~~~~~~~~~~~~~

    The four fitting steps end to end:

    1. partition the domain by clustering GLM residuals,
    2. select spline knots per partition with the lasso,
    3. fit each local model by MCMC (steps 2 and 3 run as one job per
       partition over a worker pool),
    4. smooth the local fits into a global surface, tuning the radius on a
       held-out split.

    Each step writes its artifacts to the run directory, so later steps can
    be rerun on their own.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import multiprocessing
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import artifacts
from .basis import select_basis
from .clustering import Partitioning, partition_domain
from .core import Family, fit_glm, load_dataset, split_holdout
from .errors import SpatMosaicError, StageError
from .mcmc import LocalModel, posterior_summary, run_chain
from .simulate import make_targets, simulate_dataset
from .smoothing import (FittedPartition, GlobalPredictor, prediction_frame,
                        score, tune_gamma)
from .util import Stopwatch, derive_seed, logger

STAGES = ('data', 'cluster', 'fit', 'tune', 'predict')

# derive_seed keys of the independent random streams of a run
_SPLIT, _CHAIN, _FOLDS = 0, 1, 2


@dataclass
class RunReport:
    """Outcome of one run.

    Attributes:
        timings (dict): Wall-clock seconds per stage.
        partition_sizes (list): ``N_k`` per partition.
        active_counts (list): Selected knots ``m_k`` per partition.
        score_table (dict): ``{K: {gamma: score}}``.
        chosen_K (int): Partition count of the best cell.
        chosen_gamma (float): Radius of the best cell.
        metrics (dict): Scores and diagnostics of the chosen fit.
        partition_seconds (dict): Per-partition ``lasso`` / ``mcmc`` seconds.
        error (dict): Failure record ``{stage, type, message}`` if any.
    """

    timings: dict = field(default_factory=dict)
    partition_sizes: list = field(default_factory=list)
    active_counts: list = field(default_factory=list)
    score_table: dict = field(default_factory=dict)
    chosen_K: int = None
    chosen_gamma: float = None
    metrics: dict = field(default_factory=dict)
    partition_seconds: dict = field(default_factory=dict)
    n_train: int = 0
    n_validation: int = 0
    iters: int = 0
    error: dict = None

    def to_dict(self):
        d = asdict(self)
        d['score_table'] = {str(K): {repr(float(g)): s for g, s in row.items()}
                            for K, row in self.score_table.items()}
        d['partition_seconds'] = {str(k): v for k, v in self.partition_seconds.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d['score_table'] = {int(K): {float(g): s for g, s in row.items()}
                            for K, row in d.get('score_table', {}).items()}
        d['partition_seconds'] = {int(k): v for k, v in d.get('partition_seconds', {}).items()}
        return cls(**d)

    def score_frame(self):
        """Score table as a DataFrame, rows K and columns gamma."""
        frame = pd.DataFrame(self.score_table).T.sort_index()
        frame.index.name = 'K'
        return frame[sorted(frame.columns)] if len(frame.columns) else frame


def save_report(run, report):
    artifacts.write_json(run.path('report.json'), report.to_dict())


def load_report(out_dir):
    return RunReport.from_dict(artifacts.read_json(artifacts.RunDirectory(out_dir).path('report.json')))


def argmin_cell(score_table):
    """``(K, gamma)`` with the smallest score; ties go to smaller K, then
    smaller gamma."""
    best = None
    for K in sorted(score_table):
        for g in sorted(score_table[K]):
            s = score_table[K][g]
            if s is None or not np.isfinite(s):
                continue
            if best is None or s < best[0]:
                best = (s, K, g)
    return (None, None) if best is None else (best[1], best[2])


# ----------------------------------------------------------------------
# Stages
# ----------------------------------------------------------------------

def prepare_data(config, run):
    """Load or simulate the dataset, split it and persist both halves."""
    if config.data_path:
        data = load_dataset(config.data_path, config.schema(), config.family)
    else:
        sim = config.sim_config()
        targets = make_targets(config.sim_n, config.sim_layout, sim.domain, config.seed)
        data = simulate_dataset(targets, sim)
        artifacts.write_json(run.path('data.sim.json'),
                             {'simulator': sim.to_dict(), 'n': config.sim_n,
                              'layout': config.sim_layout})
    train, valid = split_holdout(data, config.holdout, derive_seed(config.seed, _SPLIT))
    artifacts.write_dataset(train, run.path('train.csv'))
    artifacts.write_dataset(valid, run.path('validation.csv'))
    return train, valid


def load_split(run, config):
    """Training and validation data persisted by :func:`prepare_data`."""
    header = pd.read_csv(run.path('train.csv'), nrows=0).columns
    covariates = [c for c in header if c not in ('x', 'y', 'z')]
    return (artifacts.read_dataset(run.path('train.csv'), config.family, covariates),
            artifacts.read_dataset(run.path('validation.csv'), config.family, covariates))


def cluster_stage(config, train, run, K=None):
    K = config.K if K is None else K
    glm = fit_glm(train, config.residual)
    partitioning = partition_domain(train, glm.residuals, K, config.lattice)
    artifacts.write_partition_map(run.path('partition_map.csv'), train.coords,
                                  partitioning.labels)
    return partitioning, glm


def load_partitioning(run):
    labels = artifacts.read_partition_map(run.path('partition_map.csv'))
    return Partitioning(int(labels.max()) + 1, labels, None)


@dataclass
class PartitionJob:
    """Immutable inputs of one partition's lasso + MCMC job."""

    k: int
    coords: np.ndarray
    z: np.ndarray
    X: np.ndarray
    family: str
    knots: int
    iters: int
    burn_in: int
    chain_seed: int
    fold_seed: int
    out: str

    @property
    def size(self):
        return self.z.shape[0]


def fit_partition(job):
    """Knot selection and MCMC for one partition; writes its artifacts.

    Runs in a worker process.
    """
    family = Family.parse(job.family)
    started = time.perf_counter()
    basis, lasso = select_basis(job.coords, job.z, job.X, family, job.knots,
                                seed=job.fold_seed, partition=job.k)
    lasso_seconds = time.perf_counter() - started

    started = time.perf_counter()
    model = LocalModel(job.z, job.X, basis.selected_design, family)
    samples = run_chain(model, job.iters, job.burn_in, seed=job.chain_seed, init=lasso)
    mcmc_seconds = time.perf_counter() - started

    summary = posterior_summary(samples)
    artifacts.write_partition_fit(artifacts.RunDirectory(job.out), job.k, basis, lasso,
                                  samples, summary, job.coords)
    logger.info('[fit] partition=%d N=%d m=%d acceptance=%.3f lasso=%.2fs mcmc=%.2fs',
                job.k, job.size, basis.selected.size, samples.acceptance_rate,
                lasso_seconds, mcmc_seconds)
    return {'k': job.k, 'basis': basis, 'lasso': lasso, 'samples': samples,
            'summary': summary,
            'seconds': {'lasso': lasso_seconds, 'mcmc': mcmc_seconds}}


def schedule(jobs, workers, func=fit_partition):
    """Run jobs longest first over a process pool; results keyed by ``k``."""
    jobs = sorted(jobs, key=lambda job: (-job.size, job.k))
    if workers <= 1 or len(jobs) <= 1:
        return {job.k: func(job) for job in jobs}
    pool = multiprocessing.Pool(min(workers, len(jobs)))
    try:
        pending = [(job.k, pool.apply_async(func, (job,))) for job in jobs]
        return {k: result.get() for k, result in pending}
    finally:
        pool.close()
        pool.join()


def fit_stage(config, train, partitioning, run):
    """One job per partition; returns fit results keyed by partition."""
    jobs = []
    for k in range(partitioning.K):
        idx = partitioning.members(k)
        jobs.append(PartitionJob(k, train.coords[idx], train.z[idx], train.X[idx],
                                 train.family.value, config.knots, config.iters,
                                 config.effective_burn_in,
                                 derive_seed(config.seed, _CHAIN, k),
                                 derive_seed(config.seed, _FOLDS, k), run.root))
    results = schedule(jobs, config.workers)
    artifacts.write_beta_map(run.path('beta_map.csv'),
                             [beta_map_row(results[k], train.coords[partitioning.members(k)])
                              for k in range(partitioning.K)])
    return results


def beta_map_row(result, members):
    summary = result['summary']
    row = {'partition': result['k'], 'n_obs': int(members.shape[0]),
           'centroid_x': float(members[:, 0].mean()),
           'centroid_y': float(members[:, 1].mean()),
           'm': int(result['basis'].selected.size)}
    for j in range(summary.p):
        row['beta{}_mean'.format(j + 1)] = float(summary.mean[j])
        row['beta{}_lo'.format(j + 1)] = float(summary.lo[j])
        row['beta{}_hi'.format(j + 1)] = float(summary.hi[j])
    row['acceptance_rate'] = summary.acceptance_rate
    return row


def build_predictor(results, train, partitioning, gamma, max_draws=None):
    parts = [FittedPartition.from_samples(k, train.coords[partitioning.members(k)],
                                          results[k]['basis'].selected_knots,
                                          results[k]['samples'], max_draws)
             for k in range(partitioning.K)]
    return GlobalPredictor(parts, gamma, train.family)


def tune_stage(config, predictor, valid, run):
    scores = tune_gamma(predictor, config.gammas, valid)
    artifacts.write_scores(run.path('tune.csv'), scores.table)
    return scores


def predict_stage(config, predictor, valid, run):
    """Validation predictions at the predictor's radius; returns the score."""
    draws = None
    if config.intervals and predictor.n_draws:
        draws = np.arange(predictor.n_draws)
    eta, home, fallback = predictor.predict_eta(valid.coords, valid.X, workers=config.workers)
    eta_draws = None
    if draws is not None:
        eta_draws, _, _ = predictor.predict_eta(valid.coords, valid.X, home=home,
                                                draws=draws, workers=config.workers)
    frame = prediction_frame(valid.coords, eta, home, fallback, predictor.family, eta_draws)
    artifacts.write_predictions(run.path('predictions.csv'), frame)
    mu = predictor.family.linkinv(eta)
    return score(mu, valid.z, predictor.family), int(fallback.sum())


def baseline_score(train, valid):
    """Score of the covariate-only GLM on the validation split."""
    glm = fit_glm(train)
    return score(glm.predict_mean(valid.X, train.family), valid.z, train.family)


# ----------------------------------------------------------------------
# Drivers
# ----------------------------------------------------------------------

class _StageRunner(object):
    """Runs stages under a stopwatch and records the first failure."""

    def __init__(self, run, report):
        self.run = run
        self.report = report
        self.watch = Stopwatch()

    def __call__(self, name, func, *args, **kwargs):
        try:
            with self.watch.stage(name):
                return func(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            error = StageError(name, exc)
            self.report.timings = dict(self.watch.seconds)
            self.report.error = error.to_record()
            save_report(self.run, self.report)
            log = logger.warning if isinstance(exc, SpatMosaicError) else logger.exception
            log('[pipeline] %s', error)
            raise error from exc
        finally:
            self.report.timings = dict(self.watch.seconds)


def run_pipeline(config, K=None):
    """Steps 1 to 4 for one partition count, persisting every artifact.

    Returns:
        RunReport: Also written to ``<out>/report.json``.

    Raises:
        StageError: A stage failed; the report up to that stage is written.

    """
    K = config.K if K is None else K
    run = artifacts.RunDirectory(config.out)
    run.ensure()
    artifacts.write_json(run.path('config.json'), dict(config.to_dict(), K=K))
    report = RunReport(iters=config.iters)
    stage = _StageRunner(run, report)

    train, valid = stage('data', prepare_data, config, run)
    report.n_train, report.n_validation = train.n, valid.n
    partitioning, _ = stage('cluster', cluster_stage, config, train, run, K)
    report.partition_sizes = [int(s) for s in partitioning.sizes()]
    results = stage('fit', fit_stage, config, train, partitioning, run)
    report.active_counts = [int(results[k]['basis'].selected.size) for k in range(K)]
    report.partition_seconds = {k: results[k]['seconds'] for k in range(K)}

    max_draws = config.max_draws if config.intervals else None
    predictor = stage('tune', build_predictor, results, train, partitioning,
                      config.gammas[0], max_draws)
    scores = stage('tune', tune_stage, config, predictor, valid, run)
    report.score_table = {K: dict(zip(scores.table['gamma'], scores.table['score']))}
    report.chosen_K, report.chosen_gamma = K, scores.best_gamma

    value, fallback = stage('predict', predict_stage, config,
                            predictor.with_gamma(scores.best_gamma), valid, run)
    report.metrics = {
        'metric': scores.metric,
        'score': value,
        'baseline_score': stage('baseline', baseline_score, train, valid),
        'fallback_locations': fallback,
        'acceptance_rates': [results[k]['samples'].acceptance_rate for k in range(K)],
        'short_chains': int(sum(results[k]['samples'].short_chain for k in range(K))),
        'truncated_paths': int(sum(results[k]['lasso'].truncated for k in range(K))),
    }
    report.timings = dict(stage.watch.seconds)
    save_report(run, report)
    logger.info('[pipeline] K=%d gamma=%g %s=%.6g (baseline %.6g)', K,
                scores.best_gamma, scores.metric, value, report.metrics['baseline_score'])
    return report


@dataclass
class SweepResult:
    best_K: int
    best_gamma: float
    score_table: dict
    reports: dict

    def score_frame(self):
        return RunReport(score_table=self.score_table).score_frame()


def sweep_K(config, K_candidates):
    """Full pipeline per partition count, each in ``<out>/K<k>``.

    The best ``(K, gamma)`` is the argmin of the joint score table, ties to
    smaller K.
    """
    K_candidates = sorted(set(int(K) for K in K_candidates))
    if not K_candidates:
        raise StageError('sweep', ValueError('no K candidates'))
    reports = {}
    table = {}
    for K in K_candidates:
        sub = config.replace(out=artifacts.RunDirectory(config.out).path('K{}'.format(K)), K=K)
        reports[K] = run_pipeline(sub)
        table[K] = reports[K].score_table[K]
    best_K, best_gamma = argmin_cell(table)
    summary = RunReport(score_table=table, chosen_K=best_K, chosen_gamma=best_gamma,
                        iters=config.iters,
                        timings={'K{}'.format(K): sum(r.timings.values())
                                 for K, r in reports.items()})
    run = artifacts.RunDirectory(config.out)
    run.ensure()
    save_report(run, summary)
    return SweepResult(best_K, best_gamma, table, reports)


def report_timings(report):
    """Per-stage walltimes with derived throughput.

    Returns:
        pandas.DataFrame: Columns ``stage``, ``seconds``, ``throughput`` and
        ``unit``.

    """
    rows = []
    for name, seconds in report.timings.items():
        throughput, unit = np.nan, ''
        if name == 'fit' and report.partition_seconds:
            rates = [report.iters / v['mcmc'] for v in report.partition_seconds.values()
                     if v.get('mcmc')]
            if rates:
                throughput, unit = float(np.mean(rates)), 'iterations/s per partition'
        elif name in ('tune', 'predict') and seconds > 0 and report.n_validation:
            n = report.n_validation * (len(report.score_table.get(report.chosen_K, {}))
                                       if name == 'tune' else 1)
            throughput, unit = n / seconds, 'locations/s'
        elif name == 'data' and seconds > 0 and report.n_train:
            throughput, unit = (report.n_train + report.n_validation) / seconds, 'rows/s'
        rows.append({'stage': name, 'seconds': seconds,
                     'throughput': throughput, 'unit': unit})
    for k, v in sorted(report.partition_seconds.items()):
        for part in ('lasso', 'mcmc'):
            rows.append({'stage': 'partition {} {}'.format(k, part),
                         'seconds': v.get(part, np.nan),
                         'throughput': (report.iters / v['mcmc']
                                        if part == 'mcmc' and v.get('mcmc') else np.nan),
                         'unit': 'iterations/s' if part == 'mcmc' else ''})
    return pd.DataFrame(rows, columns=['stage', 'seconds', 'throughput', 'unit'])
