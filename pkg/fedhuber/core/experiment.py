"""Replicated experiments: generate or load tasks, run methods, write result tables.

Each output directory receives ``rows.csv`` (one row per replication and
method), ``summary.csv`` (per-method mean and standard error) and a ``.run``
record describing the run.
"""

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import utils
from .central import CentralConfig, partition_from_labels
from .errors import FedHuberError, UsageError
from .federated import FederationConfig, federated_fit, pooled_ml_fit
from .huber import TaskDataset
from .local_iht import LocalFitConfig, l1_huber_init, local_iht_fit
from .metrics import evaluate, model_size, prediction_error
from .projection import SparsityBudget, hard_threshold
from .simgen import ScenarioConfig, gen_setting, load_csv_tasks, split_task
from .tuning import TuningGrid, select_eta, select_model

logger = logging.getLogger(__name__)

METHODS = ('iht-local', 'iht-gp', 'iht-l2', 'iht-ml', 'oracle', 'huber-lasso', 'pooling')
ROW_COLUMNS = ['method', 'replication', 'mse', 'fp', 'fn', 'rand_index', 'pe', 'size', 'wall_ms', 'error']
METRIC_COLUMNS = ['mse', 'fp', 'fn', 'rand_index', 'pe', 'size', 'wall_ms']
SWEEP_PARAMS = {'h': 'S3', 'delta': 'S4'}
FLOAT_FORMAT = '%.12g'


@dataclass(frozen=True)
class ExperimentSpec:
    setting: str = 'S1'
    n: int = 100
    p: int = 100
    m: int = 10
    noise: str = None
    h: float = 1.0
    delta: float = 1.0
    csv_paths: tuple = ()
    methods: tuple = ('iht-local', 'iht-gp')
    replications: int = 20
    seed: int = 2024
    output_dir: str = 'results'
    test_fraction: float = 0.0
    workers: int = 1
    record_timing: bool = False
    sigma: float = 3.0
    eta: float = 0.01
    eta1: float = 1.0
    s: int = 3
    q: int = None
    k: int = 2
    lam: float = 0.1
    rounds: int = 100
    local_iters: int = 1000
    local_tol: float = 1e-8
    local_init: str = 'zero'
    init_penalty: float = 0.1
    inner_iters: int = 100
    prox_iters: int = 200
    central_tol: float = 1e-6
    kmeans_restarts: int = 10
    tune: bool = False
    k_values: tuple = ()
    s_values: tuple = ()
    q_values: tuple = ()
    lambda_values: tuple = ()
    eta_values: tuple = ()
    c1: float = 1.0
    c2: float = 1.5

    def validate(self):
        """Raise UsageError if the spec cannot be run"""
        if not self.methods:
            raise UsageError("At least one method is required")
        unknown = [method for method in self.methods if method not in METHODS]
        if unknown:
            raise UsageError(f"Unknown methods {unknown}, expected a subset of {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise UsageError(f"Methods are listed more than once: {list(self.methods)}")
        if self.replications < 1:
            raise UsageError(f"replications must be at least 1, got {self.replications}")
        if not 0 <= self.test_fraction < 1:
            raise UsageError(f"test_fraction must lie in [0, 1), got {self.test_fraction}")
        if self.workers < 1:
            raise UsageError(f"workers must be at least 1, got {self.workers}")
        if self.local_init not in ('zero', 'lasso'):
            raise UsageError(f"local_init must be 'zero' or 'lasso', got '{self.local_init}'")
        if self.seed < 0:
            raise UsageError(f"seed must be nonnegative, got {self.seed}")
        if self.csv_paths and 'oracle' in self.methods:
            raise UsageError("The oracle method needs true labels and cannot run on CSV data")
        try:
            if not self.csv_paths:
                self.scenario(0)
            self.federation_config(0)
            if self.tune:
                self.tuning_grid()
        except FedHuberError as e:
            raise UsageError(str(e)) from e
        return self

    def scenario(self, seed):
        return ScenarioConfig(
            setting=self.setting,
            n=self.n,
            p=self.p,
            m=self.m,
            noise=self.noise,
            h=self.h,
            delta=self.delta,
            seed=seed,
        )

    def federation_config(self, seed, **overrides):
        cfg = FederationConfig(
            rounds=self.rounds,
            local=LocalFitConfig(
                eta=self.eta, sigma=self.sigma, s=self.s, t_max=self.local_iters, tol=self.local_tol
            ),
            central=CentralConfig(
                lam=self.lam,
                k=self.k,
                eta1=self.eta1,
                inner_iters=self.inner_iters,
                prox_iters=self.prox_iters,
                tol=self.central_tol,
                kmeans_restarts=self.kmeans_restarts,
                seed=seed,
            ),
            budget=SparsityBudget(self.s, self.q),
        )
        return replace(cfg, **overrides) if overrides else cfg

    def tuning_grid(self):
        return TuningGrid(
            k_values=self.k_values or (self.k,),
            s_values=self.s_values or (self.s,),
            q_values=self.q_values,
            lambda_values=self.lambda_values or (self.lam,),
            eta_values=self.eta_values or (self.eta,),
            c1=self.c1,
            c2=self.c2,
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class Replication:
    """Data of one replication, split into training and optional test parts"""

    train: list
    test: list = None
    truth: object = None

    @property
    def truth_betas(self):
        return None if self.truth is None else self.truth.betas_true


@dataclass
class RunOutcome:
    rows_path: Path
    summary_path: Path
    failures: int = 0
    extra: dict = field(default_factory=dict)

    def __fspath__(self):
        return os.fspath(self.rows_path)

    @property
    def exit_code(self):
        return 1 if self.failures else 0


def replication_seed(spec, replication):
    return spec.seed + replication


def load_replication(spec, replication):
    seed = replication_seed(spec, replication)
    if spec.csv_paths:
        datasets, truth = load_csv_tasks(list(spec.csv_paths)), None
    else:
        datasets, truth = gen_setting(spec.scenario(seed))
    if spec.test_fraction > 0:
        pairs = [split_task(d, spec.test_fraction, seed + d.task_id) for d in datasets]
        return Replication([train for train, _ in pairs], [test for _, test in pairs], truth)
    return Replication(datasets, None, truth)


def _local_estimates(datasets, local_cfg, spec):
    estimates = []
    for d in datasets:
        init = None
        if spec.local_init == 'lasso':
            init = hard_threshold(
                l1_huber_init(d, spec.sigma, spec.init_penalty, spec.local_iters), local_cfg.s
            )
        estimates.append(local_iht_fit(d, local_cfg, init))
    return np.array(estimates)


def _pooled_estimate(datasets, spec):
    pooled = TaskDataset(
        np.vstack([d.x for d in datasets]), np.concatenate([d.y for d in datasets]), task_id=0
    )
    beta = l1_huber_init(pooled, spec.sigma, spec.init_penalty, spec.local_iters)
    return np.tile(beta, (len(datasets), 1))


def _with_step_size(cfg, grid, datasets):
    """Use the smallest of the per-task selected step sizes"""
    if len(grid.eta_values) < 2:
        return cfg
    etas = [select_eta(d, grid, cfg.local) for d in datasets]
    return replace(cfg, local=replace(cfg.local, eta=min(etas)))


def _configure(spec, data, seed):
    """Federation config for one replication, tuned on the training data when requested"""
    cfg = spec.federation_config(seed)
    if not spec.tune:
        return cfg
    grid = spec.tuning_grid()
    best, _ = select_model(data.train, grid, _with_step_size(cfg, grid, data.train))
    return best


def _fit(method, data, cfg, local_estimates, spec):
    """Estimates and labels (None for methods without clustering)"""
    if method == 'iht-local':
        return local_estimates, None
    if method == 'huber-lasso':
        return np.array([
            l1_huber_init(d, spec.sigma, spec.init_penalty, spec.local_iters) for d in data.train
        ]), None
    if method == 'pooling':
        return _pooled_estimate(data.train, spec), None
    if method == 'iht-ml':
        result = pooled_ml_fit(data.train, cfg, init_betas=local_estimates, truth_betas=data.truth_betas)
        return result.estimates, result.labels
    if method == 'oracle':
        groups = partition_from_labels(data.truth.labels_true)
        cfg = replace(cfg, mode='oracle-labels', partition=tuple(tuple(g) for g in groups))
    elif method == 'iht-l2':
        cfg = replace(cfg, loss='squared')
    result = federated_fit(data.train, cfg, init_betas=local_estimates, truth_betas=data.truth_betas)
    return result.estimates, result.labels


def _row(method, replication, estimates, labels, data, spec):
    if data.truth is not None:
        report = evaluate(
            method,
            replication,
            estimates,
            data.truth_betas,
            labels=labels,
            truth_labels=data.truth.labels_true,
            test_sets=data.test,
            sigma=spec.sigma,
        ).to_dict()
    else:
        report = {
            'method': method,
            'replication': replication,
            'mse': math.nan,
            'fp': math.nan,
            'fn': math.nan,
            'rand_index': math.nan,
            'pe': prediction_error(data.test, estimates, spec.sigma) if data.test else math.nan,
            'size': model_size(estimates),
        }
    report['wall_ms'] = math.nan
    report['error'] = ''
    return report


def _failed_row(method, replication, error):
    row = {column: math.nan for column in METRIC_COLUMNS}
    row.update(method=method, replication=replication, error=f"{type(error).__name__}: {error}")
    return row


def run_replication(spec, replication):
    """All methods on one replication; failures become rows with NaN metrics"""
    seed = replication_seed(spec, replication)
    data = load_replication(spec, replication)
    rows = []
    try:
        cfg = _configure(spec, data, seed)
        local_cfg = replace(cfg.local, s=cfg.budget.s)
        local_estimates = _local_estimates(data.train, local_cfg, spec)
    except FedHuberError as e:
        logger.error(f"Replication {replication}: initial fits failed: {e}")
        return [_failed_row(method, replication, e) for method in spec.methods]

    for method in spec.methods:
        started = time.perf_counter()
        try:
            estimates, labels = _fit(method, data, cfg, local_estimates, spec)
            row = _row(method, replication, estimates, labels, data, spec)
        except FedHuberError as e:
            logger.error(f"Replication {replication}, method {method} failed: {e}")
            rows.append(_failed_row(method, replication, e))
            continue
        if spec.record_timing:
            row['wall_ms'] = (time.perf_counter() - started) * 1000.0
        rows.append(row)
    logger.info(f"Replication {replication} done ({len(spec.methods)} methods, seed {seed})")
    return rows


def summarize(rows):
    """Per-method mean and standard error of every metric, in first-seen method order"""
    frame = pd.DataFrame(rows, columns=ROW_COLUMNS)
    frame[METRIC_COLUMNS] = frame[METRIC_COLUMNS].astype(float)
    methods = list(dict.fromkeys(frame['method']))
    grouped = frame.groupby('method')
    summary = pd.DataFrame({'method': methods})
    summary['runs'] = grouped.size().reindex(methods).to_numpy()
    summary['failures'] = (frame['error'] != "").groupby(frame['method']).sum().reindex(methods).to_numpy()
    for column in METRIC_COLUMNS:
        values = grouped[column]
        summary[f"{column}_mean"] = values.mean().reindex(methods).to_numpy()
        standard_error = values.std(ddof=1) / np.sqrt(values.count())
        summary[f"{column}_se"] = standard_error.reindex(methods).to_numpy()
    return summary


def _write_table(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
    return path


def run_experiment(spec, progress=None):
    """Run every replication and write rows.csv, summary.csv and the .run record"""
    spec.validate()
    output_dir = Path(spec.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rows_path = output_dir / 'rows.csv'
    summary_path = output_dir / 'summary.csv'

    record = {
        'kind': 'experiment',
        'spec': spec.to_dict(),
        'status': 'running',
        'started_at': utils.utc_now(),
        'rows_path': str(rows_path),
        'summary_path': str(summary_path),
    }
    utils.save_run_info(output_dir, record)
    logger.info(
        f"Experiment started: {spec.replications} replications of {list(spec.methods)} -> {output_dir}"
    )

    by_replication = {}
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = {pool.submit(run_replication, spec, r): r for r in range(spec.replications)}
            for done, (future, r) in enumerate(futures.items(), start=1):
                by_replication[r] = future.result()
                if progress:
                    progress(done, spec.replications)
    else:
        for r in range(spec.replications):
            by_replication[r] = run_replication(spec, r)
            if progress:
                progress(r + 1, spec.replications)

    order = {method: i for i, method in enumerate(spec.methods)}
    rows = [
        row
        for r in range(spec.replications)
        for row in sorted(by_replication[r], key=lambda row: order[row['method']])
    ]
    _write_table(pd.DataFrame(rows, columns=ROW_COLUMNS), rows_path)
    _write_table(summarize(rows), summary_path)

    failures = sum(1 for row in rows if row['error'])
    record.update(
        status='completed' if not failures else 'completed_with_failures',
        completed_at=utils.utc_now(),
        failures=failures,
    )
    utils.save_run_info(output_dir, record)
    logger.info(f"Experiment finished: {len(rows)} rows, {failures} failures, results in {rows_path}")
    return RunOutcome(rows_path, summary_path, failures)


def _sweep_value(value):
    return f"{value:g}" if isinstance(value, float) else str(value)


def validate_sweep(spec, param, values):
    """Raise UsageError unless the sweep parameter matches the scenario"""
    if param not in SWEEP_PARAMS:
        raise UsageError(f"Unknown sweep parameter '{param}', expected one of {list(SWEEP_PARAMS)}")
    if spec.csv_paths:
        raise UsageError("Sweeps need generated data, not CSV input")
    if spec.setting != SWEEP_PARAMS[param]:
        raise UsageError(f"Sweeping '{param}' requires setting {SWEEP_PARAMS[param]}, got {spec.setting}")
    values = list(values)
    if not values:
        raise UsageError("Sweep value list is empty")
    for value in values:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"Sweep values must be numbers, got {value!r}")
    spec.validate()
    return values


def run_sweep(spec, param, values, progress=None):
    """One experiment per swept value; sweep.csv holds every summary row tagged by value"""
    values = validate_sweep(spec, param, values)

    output_dir = Path(spec.output_dir)
    specs = [
        replace(spec, **{param: float(value)}, output_dir=str(output_dir / f"{param}={_sweep_value(value)}"))
        for value in values
    ]
    for swept in specs:
        swept.validate()

    frames, failures = [], 0
    for i, (value, swept) in enumerate(zip(values, specs)):
        outcome = run_experiment(swept)
        failures += outcome.failures
        summary = pd.read_csv(outcome.summary_path)
        summary.insert(0, param, float(value))
        frames.append(summary)
        if progress:
            progress(i + 1, len(specs))

    sweep_path = output_dir / 'sweep.csv'
    _write_table(pd.concat(frames, ignore_index=True), sweep_path)
    utils.save_run_info(output_dir, {
        'kind': 'sweep',
        'spec': spec.to_dict(),
        'param': param,
        'values': [float(value) for value in values],
        'status': 'completed' if not failures else 'completed_with_failures',
        'completed_at': utils.utc_now(),
        'failures': failures,
        'summary_path': str(sweep_path),
    })
    logger.info(f"Sweep over {param} finished: {len(values)} values, results in {sweep_path}")
    return RunOutcome(sweep_path, sweep_path, failures)


def run_tuning(spec):
    """Model selection on the data of replication 0; writes tuning.csv"""
    spec.validate()
    output_dir = Path(spec.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    data = load_replication(spec, 0)
    cfg = spec.federation_config(replication_seed(spec, 0))
    grid = spec.tuning_grid()
    best, table = select_model(data.train, grid, _with_step_size(cfg, grid, data.train))

    tuning_path = _write_table(
        pd.DataFrame(table, columns=['k', 's', 'q', 'lam', 'criterion']), output_dir / 'tuning.csv'
    )
    selected = {
        'k': best.central.k,
        's': best.budget.s,
        'q': best.budget.q,
        'lam': best.central.lam,
        'eta': best.eta,
    }
    utils.save_run_info(output_dir, {
        'kind': 'tuning',
        'spec': spec.to_dict(),
        'status': 'completed',
        'completed_at': utils.utc_now(),
        'selected': selected,
        'summary_path': str(tuning_path),
    })
    return RunOutcome(tuning_path, tuning_path, 0, extra={'selected': selected})
