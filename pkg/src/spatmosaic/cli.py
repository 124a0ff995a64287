# -*- coding: utf-8 -*-
"""
    spatmosaic.cli
    ~~~~~~~~~~~~~~

    Command-line interface.

    Commands
    --------
    - simulate: write a simulated dataset (CSV plus a JSON sidecar)
    - cluster: split the data and partition the training domain
    - fit: lasso knot selection and MCMC for every partition
    - tune: score the smoothing radii from the persisted fits
    - predict: predictions at the validation rows, a CSV or a grid
    - pipeline: everything above, optionally sweeping K
    - report: stage timings and the score table of a run

    Usage
    -----
        python -m spatmosaic --config run.cfg --out runs/a pipeline
        python -m spatmosaic --seed 3 pipeline --sweep 4,9,16
        python -m spatmosaic --out runs/a report

    Exit status is 0 on success, 2 for invalid input or configuration and 3
    when a stage fails.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import typer
from typer import Option

from . import artifacts, pipeline
from .config import (RunConfig, load_run_config, parse_floats, parse_ints,
                     parse_names, parse_optional_int)
from .core import load_dataset
from .errors import (ArgumentError, ConfigurationError, SchemaError,
                     SpatMosaicError, StageError, ValidationError)
from .simulate import make_targets, simulate_dataset
from .util import bounding_box, matrix_to_string, regular_grid

app = typer.Typer(
    name='spatmosaic',
    help='Partitioned basis-expansion GLMMs for large nonstationary spatial data',
    add_completion=False,
)

EXIT_INVALID = 2
EXIT_STAGE = 3
_INVALID = (SchemaError, ValidationError, ArgumentError, ConfigurationError)

_state = {'config': None, 'overrides': {}}


def exit_code(exc):
    """2 for bad input or settings, 3 for anything else."""
    cause = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_INVALID if isinstance(cause, _INVALID) else EXIT_STAGE


@contextmanager
def handle_errors():
    try:
        yield
    except SpatMosaicError as exc:
        typer.echo('Error: {}'.format(exc), err=True)
        raise typer.Exit(exit_code(exc))


def given(**values):
    """Options actually passed on the command line; absent ones are ``None``."""
    return {k: v for k, v in values.items() if v is not None}


def burn_in_override(value):
    """``--burn-in 500`` or ``--burn-in none`` (half of the iterations)."""
    if value is None:
        return {}
    try:
        return {'burn_in': parse_optional_int(value)}
    except ValueError:
        raise ConfigurationError('expected an integer or none', '--burn-in')


def run_config(explicit=None, **overrides):
    """Settings with the given options on top; ``explicit`` entries are
    applied even when ``None``."""
    merged = dict(_state['overrides'])
    merged.update(given(**overrides))
    merged.update(explicit or {})
    return load_run_config(_state['config'], merged)


def _echo_table(frame, fmt='{:.6g}'):
    rows = frame.to_numpy(float)
    typer.echo(matrix_to_string(rows, [str(i) for i in frame.index],
                                [str(c) for c in frame.columns],
                                lambda v: fmt.format(v)))


@app.callback()
def main(
    config: Annotated[Optional[Path], Option(
        '--config', '-c', help='Run file of key = value settings')] = None,
    seed: Annotated[Optional[int], Option('--seed', help='Master seed')] = None,
    workers: Annotated[Optional[int], Option(
        '--workers', '-w', help='Worker processes for partition jobs')] = None,
    out: Annotated[Optional[Path], Option('--out', '-o', help='Run directory')] = None,
    verbose: Annotated[bool, Option('--verbose', '-v', help='Debug logging')] = False,
):
    """Fit, tune and predict with partitioned spatial GLMMs."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if config is not None and not config.exists():
        typer.echo('Error: run file not found: {}'.format(config), err=True)
        raise typer.Exit(EXIT_INVALID)
    _state['config'] = str(config) if config is not None else None
    _state['overrides'] = given(seed=seed, workers=workers,
                                   out=str(out) if out is not None else None)


@app.command()
def simulate(
    n: Annotated[Optional[int], Option('--n', help='Number of locations')] = None,
    family: Annotated[Optional[str], Option('--family', help='poisson or bernoulli')] = None,
    layout: Annotated[Optional[str], Option('--layout', help='grid or uniform')] = None,
    noise_sd: Annotated[Optional[float], Option('--noise-sd')] = None,
    kernel_centering: Annotated[Optional[str], Option('--kernel-centering')] = None,
    literal_exponent: Annotated[Optional[bool], Option('--literal-exponent')] = None,
    output: Annotated[Optional[Path], Option('--output', help='CSV path')] = None,
):
    """Simulate a nonstationary dataset by process convolution."""
    with handle_errors():
        config = run_config(sim_n=n, family=family, sim_layout=layout,
                            sim_noise_sd=noise_sd, sim_kernel_centering=kernel_centering,
                            sim_literal_exponent=literal_exponent)
        sim = config.sim_config()
        targets = make_targets(config.sim_n, config.sim_layout, sim.domain, config.seed)
        data = simulate_dataset(targets, sim)
        path = str(output) if output else artifacts.RunDirectory(config.out).path('data.csv')
        artifacts.write_dataset(data, path)
        typer.echo('{} rows -> {}'.format(data.n, path))


@app.command()
def cluster(
    data: Annotated[Optional[Path], Option('--data', help='Input CSV')] = None,
    family: Annotated[Optional[str], Option('--family')] = None,
    covariates: Annotated[Optional[str], Option('--covariates', help='a,b')] = None,
    K: Annotated[Optional[int], Option('--K', help='Partitions')] = None,
    lattice: Annotated[Optional[int], Option('--lattice')] = None,
):
    """Split the data and partition the training domain."""
    with handle_errors():
        config = run_config(data_path=str(data) if data else None, family=family,
                            covariates=parse_names(covariates) if covariates else None,
                            K=K, lattice=lattice)
        run = artifacts.RunDirectory(config.out)
        run.ensure()
        artifacts.write_json(run.path('config.json'), config.to_dict())
        try:
            train, _ = pipeline.prepare_data(config, run)
            partitioning, _ = pipeline.cluster_stage(config, train, run)
        except SpatMosaicError as exc:
            raise StageError('cluster', exc)
        typer.echo('partition sizes: {}'.format(' '.join(str(s) for s in partitioning.sizes())))


@app.command()
def fit(
    knots: Annotated[Optional[int], Option('--knots', help='Candidate knots per partition')] = None,
    iters: Annotated[Optional[int], Option('--iters')] = None,
    burn_in: Annotated[Optional[str], Option(
        '--burn-in', help='Adaptation iterations; none for half of --iters')] = None,
):
    """Knot selection and MCMC for every partition of a clustered run."""
    with handle_errors():
        run = artifacts.RunDirectory(run_config().out)
        config = _persisted_config(run).replace(**given(knots=knots, iters=iters),
                                                **burn_in_override(burn_in),
                                                **_global_overrides())
        artifacts.write_json(run.path('config.json'), config.to_dict())
        try:
            train, _ = pipeline.load_split(run, config)
            results = pipeline.fit_stage(config, train, pipeline.load_partitioning(run), run)
        except SpatMosaicError as exc:
            raise StageError('fit', exc)
        for k in sorted(results):
            typer.echo('partition {}: m={} acceptance={:.3f}'.format(
                k, results[k]['basis'].selected.size, results[k]['samples'].acceptance_rate))


@app.command()
def tune(
    gammas: Annotated[Optional[str], Option('--gammas', help='0.1,0.25,0.5,1')] = None,
):
    """Score smoothing radii from the persisted fits."""
    with handle_errors():
        run = artifacts.RunDirectory(run_config().out)
        config = _persisted_config(run).replace(
            **given(gammas=parse_floats(gammas) if gammas else None))
        try:
            predictor, _ = artifacts.load_predictor(run.root, gamma=config.gammas[0])
            _, valid = pipeline.load_split(run, config)
            scores = pipeline.tune_stage(config, predictor, valid, run)
        except SpatMosaicError as exc:
            raise StageError('tune', exc)
        _update_report(run, predictor.K, scores)
        _echo_table(scores.table.set_index('gamma')[['score']])
        typer.echo('best gamma: {:g}'.format(scores.best_gamma))


@app.command()
def predict(
    gamma: Annotated[Optional[float], Option('--gamma', help='Default: tuned radius')] = None,
    input_csv: Annotated[Optional[Path], Option(
        '--input', help='CSV of locations and covariates to predict at')] = None,
    grid: Annotated[Optional[int], Option(
        '--grid', help='Export an n x n surface of the mean response')] = None,
    intervals: Annotated[bool, Option('--intervals', help='95% predictive intervals')] = False,
):
    """Predict at the validation rows, an input CSV or a regular grid."""
    with handle_errors():
        run = artifacts.RunDirectory(run_config().out)
        config = _persisted_config(run).replace(**given(intervals=intervals or None),
                                                **_global_overrides())
        max_draws = config.max_draws if config.intervals else None
        try:
            predictor, _ = artifacts.load_predictor(run.root, gamma=gamma, max_draws=max_draws)
            if grid:
                _predict_grid(predictor, grid, run)
                return
            if input_csv:
                data = load_dataset(str(input_csv), config.schema(), config.family)
            else:
                _, data = pipeline.load_split(run, config)
            value, fallback = pipeline.predict_stage(config, predictor, data, run)
        except SpatMosaicError as exc:
            raise StageError('predict', exc)
        typer.echo('gamma={:g} score={:.6g} fallback={} -> {}'.format(
            predictor.gamma, value, fallback, run.path('predictions.csv')))


def _predict_grid(predictor, n, run):
    """Mean response surface with covariates fixed at the training means."""
    train, _ = pipeline.load_split(run, _persisted_config(run))
    grid = regular_grid(n, n, bounding_box(train.coords))
    X = np.tile(train.X.mean(axis=0), (grid.shape[0], 1))
    eta, _, _ = predictor.predict_eta(grid, X)
    path = run.path('surface.csv')
    artifacts.write_surface(path, grid, predictor.family.linkinv(eta))
    typer.echo('{} grid points -> {}'.format(grid.shape[0], path))


@app.command('pipeline')
def run_pipeline(
    data: Annotated[Optional[Path], Option('--data', help='Input CSV; simulate if omitted')] = None,
    family: Annotated[Optional[str], Option('--family')] = None,
    K: Annotated[Optional[int], Option('--K')] = None,
    sweep: Annotated[Optional[str], Option('--sweep', help='K candidates, e.g. 4,9,16')] = None,
    gammas: Annotated[Optional[str], Option('--gammas')] = None,
    knots: Annotated[Optional[int], Option('--knots')] = None,
    iters: Annotated[Optional[int], Option('--iters')] = None,
    burn_in: Annotated[Optional[str], Option(
        '--burn-in', help='Adaptation iterations; none for half of --iters')] = None,
    n: Annotated[Optional[int], Option('--n', help='Simulated locations')] = None,
    intervals: Annotated[bool, Option('--intervals')] = False,
):
    """Run every step, optionally over several partition counts."""
    with handle_errors():
        config = run_config(burn_in_override(burn_in),
                            data_path=str(data) if data else None, family=family, K=K,
                            K_candidates=parse_ints(sweep) if sweep else None,
                            gammas=parse_floats(gammas) if gammas else None,
                            knots=knots, iters=iters, sim_n=n,
                            intervals=intervals or None)
        if config.K_candidates:
            result = pipeline.sweep_K(config, config.K_candidates)
            _echo_table(result.score_frame())
            typer.echo('best K={} gamma={:g}'.format(result.best_K, result.best_gamma))
            return
        report = pipeline.run_pipeline(config)
        _echo_table(report.score_frame())
        typer.echo('gamma={:g} {}={:.6g} baseline={:.6g}'.format(
            report.chosen_gamma, report.metrics['metric'], report.metrics['score'],
            report.metrics['baseline_score']))


@app.command()
def report():
    """Stage timings and the score table of a run."""
    with handle_errors():
        out = run_config().out
        try:
            rep = pipeline.load_report(out)
        except (IOError, OSError) as exc:
            raise ConfigurationError('no report: {}'.format(exc), None, out)
        table = pipeline.report_timings(rep)
        for row in table.itertuples():
            typer.echo('{:<24} {:>10.3f} s  {}'.format(
                row.stage, row.seconds,
                '' if np.isnan(row.throughput) else '{:.4g} {}'.format(row.throughput, row.unit)))
        if rep.score_table:
            _echo_table(rep.score_frame())
        if rep.error:
            typer.echo('failed at {stage}: {type}: {message}'.format(**rep.error))


def _global_overrides():
    return {k: v for k, v in _state['overrides'].items() if k != 'out'}


def _persisted_config(run):
    try:
        d = artifacts.read_json(run.path('config.json'))
    except (IOError, OSError):
        raise ConfigurationError('no config.json; run cluster or pipeline first',
                                 None, run.root)
    return RunConfig.from_dict(dict(d, out=run.root))


def _update_report(run, K, scores):
    try:
        rep = pipeline.load_report(run.root)
    except (IOError, OSError):
        rep = pipeline.RunReport()
    rep.score_table = {K: dict(zip(scores.table['gamma'], scores.table['score']))}
    rep.chosen_K, rep.chosen_gamma = K, scores.best_gamma
    pipeline.save_report(run, rep)


def run():
    app()
