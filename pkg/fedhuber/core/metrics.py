"""Estimation, support recovery and clustering metrics"""

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.metrics import rand_score

from .errors import ParameterError, ShapeError
from .huber import huber_objective


@dataclass(frozen=True)
class MetricsReport:
    method: str
    replication: int
    mse: float
    fp: float
    fn: float
    rand_index: float = float('nan')
    pe: float = float('nan')
    size: float = float('nan')

    def to_dict(self):
        return asdict(self)


def _pair(estimates, truth):
    estimates = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimates.ndim == 1:
        estimates = estimates.reshape(1, -1)
    if truth.ndim == 1:
        truth = truth.reshape(1, -1)
    if estimates.shape != truth.shape:
        raise ShapeError(f"Estimates have shape {estimates.shape}, truth has {truth.shape}")
    return estimates, truth


def mse(estimates, truth):
    """(1/M) sum_m ||beta_hat_m - beta*_m||^2"""
    estimates, truth = _pair(estimates, truth)
    return float(np.mean(np.sum((estimates - truth) ** 2, axis=1)))


def fp_fn(estimates, truth):
    """Average false positives and false negatives per task (exact-zero supports)"""
    estimates, truth = _pair(estimates, truth)
    selected = estimates != 0
    relevant = truth != 0
    fp = np.sum(selected & ~relevant, axis=1)
    fn = np.sum(~selected & relevant, axis=1)
    return float(np.mean(fp)), float(np.mean(fn))


def rand_index(labels_a, labels_b):
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape or labels_a.ndim != 1:
        raise ShapeError(f"Label vectors differ in shape: {labels_a.shape} vs {labels_b.shape}")
    if labels_a.size < 2:
        raise ParameterError("Rand Index needs at least two tasks")
    return float(rand_score(labels_a, labels_b))


def prediction_error(datasets, estimates, sigma):
    """Mean over tasks of the average Huber loss on the given data"""
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.shape[0] != len(datasets):
        raise ShapeError(f"{estimates.shape[0]} estimates for {len(datasets)} tasks")
    return float(np.mean([huber_objective(d, beta, sigma) for d, beta in zip(datasets, estimates)]))


def model_size(estimates):
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.ndim == 1:
        estimates = estimates.reshape(1, -1)
    return float(np.mean(np.count_nonzero(estimates, axis=1)))


def evaluate(method, replication, estimates, truth_betas, labels=None, truth_labels=None,
             test_sets=None, sigma=3.0):
    fp, fn = fp_fn(estimates, truth_betas)
    ri = float('nan')
    if labels is not None and truth_labels is not None and len(truth_labels) >= 2:
        ri = rand_index(labels, truth_labels)
    pe = float('nan')
    if test_sets is not None:
        pe = prediction_error(test_sets, estimates, sigma)
    return MetricsReport(
        method=method,
        replication=replication,
        mse=mse(estimates, truth_betas),
        fp=fp,
        fn=fn,
        rand_index=ri,
        pe=pe,
        size=model_size(estimates),
    )
