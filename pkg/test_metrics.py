"""Tests for estimation, support and clustering metrics"""

import math

import numpy as np
import pytest

from fedhuber.core.errors import ParameterError, ShapeError
from fedhuber.core.huber import TaskDataset
from fedhuber.core.metrics import evaluate, fp_fn, model_size, mse, prediction_error, rand_index


def test_mse_averages_squared_distance_over_tasks():
    estimates = np.array([[1.0, 0.0], [0.0, 2.0]])
    truth = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert mse(estimates, truth) == 2.5
    assert mse(truth, truth) == 0.0
    with pytest.raises(ShapeError):
        mse(estimates, truth[:1])


def test_fp_fn_counts_support_differences():
    estimates = np.array([[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 0.0, 2.0]])
    truth = np.array([[1.0, 0.0, 3.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    assert fp_fn(estimates, truth) == (1.0, 0.5)
    assert fp_fn(truth, truth) == (0.0, 0.0)


def test_fp_fn_matches_set_difference(rng):
    for _ in range(50):
        truth = rng.standard_normal((5, 12)) * (rng.random((5, 12)) < 0.3)
        estimates = rng.standard_normal((5, 12)) * (rng.random((5, 12)) < 0.3)
        fps, fns = [], []
        for est, tru in zip(estimates, truth):
            selected, relevant = set(np.flatnonzero(est)), set(np.flatnonzero(tru))
            fps.append(len(selected - relevant))
            fns.append(len(relevant - selected))
        assert fp_fn(estimates, truth) == (np.mean(fps), np.mean(fns))


def test_rand_index():
    assert rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert rand_index([0, 0, 0, 0], [0, 0, 0, 0]) == 1.0
    # pairs: (0,1) same/same, (0,2) diff/same, (1,2) diff/same -> 1 of 3 agree
    assert math.isclose(rand_index([0, 0, 1], [0, 1, 1]), 1.0 / 3.0)
    with pytest.raises(ParameterError):
        rand_index([0], [0])
    with pytest.raises(ShapeError):
        rand_index([0, 1], [0, 1, 1])


def test_rand_index_is_symmetric_and_ignores_label_names(rng):
    for _ in range(50):
        a = rng.integers(0, 3, size=10)
        b = rng.integers(0, 4, size=10)
        value = rand_index(a, b)
        assert math.isclose(rand_index(b, a), value)
        renamed = rng.permutation(4)[b]
        assert math.isclose(rand_index(a, renamed), value)
        assert math.isclose(rand_index(rng.permutation(3)[a], b), value)


def test_mse_ignores_task_order(rng):
    estimates = rng.standard_normal((7, 5))
    truth = rng.standard_normal((7, 5))
    order = rng.permutation(7)
    assert math.isclose(mse(estimates[order], truth[order]), mse(estimates, truth), rel_tol=1e-12)


def test_prediction_error_and_size():
    d = TaskDataset(np.array([[1.0], [2.0]]), np.array([1.0, 10.0]))
    # residuals 0 and 8 with sigma 2: losses 0 and 2*8 - 2 = 14
    assert prediction_error([d], np.array([[1.0]]), 2.0) == 7.0
    with pytest.raises(ShapeError):
        prediction_error([d, d], np.array([[1.0]]), 2.0)
    assert model_size(np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 3.0]])) == 1.5


def test_evaluate_builds_report(make_task):
    d, beta = make_task(seed=1)
    estimates = np.array([beta, beta])
    truth = np.array([beta, beta])
    report = evaluate('iht-gp', 3, estimates, truth, labels=[0, 1], truth_labels=[1, 0], test_sets=[d, d])
    assert report.method == 'iht-gp'
    assert report.replication == 3
    assert (report.mse, report.fp, report.fn, report.rand_index) == (0.0, 0.0, 0.0, 1.0)
    assert report.size == 3.0
    assert report.pe > 0

    bare = evaluate('iht-local', 0, estimates, truth).to_dict()
    assert math.isnan(bare['rand_index']) and math.isnan(bare['pe'])
    assert set(bare) == {'method', 'replication', 'mse', 'fp', 'fn', 'rand_index', 'pe', 'size'}
