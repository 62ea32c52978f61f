"""Tests for hard thresholding and group projection"""

import itertools

import numpy as np
import pytest

from fedhuber.core.errors import DomainError, ParameterError, ShapeError
from fedhuber.core.projection import SparsityBudget, group_project, hard_threshold, top_support


def test_hard_threshold_keeps_largest_magnitudes():
    assert np.array_equal(hard_threshold([3.0, -5.0, 1.0], 1), [0.0, -5.0, 0.0])
    assert np.array_equal(hard_threshold([3.0, -5.0, 1.0], 3), [3.0, -5.0, 1.0])
    assert np.array_equal(hard_threshold([0.5, 4.0, -2.0, 0.1], 2), [0.0, 4.0, -2.0, 0.0])


def test_hard_threshold_ties_go_to_smaller_index():
    assert np.array_equal(hard_threshold([2.0, -2.0, 1.0], 1), [2.0, 0.0, 0.0])
    assert np.array_equal(top_support([1.0, 1.0, 1.0, 1.0], 2), [0, 1])


def test_hard_threshold_is_best_sparse_approximation():
    """200 random vectors: equals the brute-force best s-sparse approximation"""
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = int(rng.integers(1, 11))
        s = int(rng.integers(1, p + 1))
        alpha = rng.standard_normal(p)
        projected = hard_threshold(alpha, s)
        assert np.count_nonzero(projected) <= s
        best = min(
            np.sum(np.delete(alpha, list(keep)) ** 2)
            for keep in itertools.combinations(range(p), s)
        )
        assert np.isclose(np.sum((alpha - projected) ** 2), best, rtol=0, atol=1e-12)


def test_hard_threshold_errors():
    with pytest.raises(ParameterError):
        hard_threshold([1.0, 2.0], 3)
    with pytest.raises(ParameterError):
        hard_threshold([1.0, 2.0], 0)
    with pytest.raises(DomainError):
        hard_threshold([1.0, np.nan], 1)
    with pytest.raises(ShapeError):
        hard_threshold(np.ones((2, 2)), 1)


def test_group_project_ranks_by_group_sum():
    """Coordinates are ranked by |sum over members|, support shared by every member"""
    alphas = np.array([[1.0, 0.0, 0.5], [-1.0, 0.2, 0.5]])
    out = group_project(alphas, 1)
    assert np.array_equal(out, [[0.0, 0.0, 0.5], [0.0, 0.0, 0.5]])

    rng = np.random.default_rng(8)
    alphas = rng.standard_normal((4, 9))
    out = group_project(alphas, 3)
    supports = {tuple(np.flatnonzero(row)) for row in out}
    assert len(supports) == 1
    keep = list(supports.pop())
    assert np.array_equal(out[:, keep], alphas[:, keep])


def test_group_project_singleton_is_hard_threshold(rng):
    alpha = rng.standard_normal(10)
    assert np.array_equal(group_project(alpha, 4)[0], hard_threshold(alpha, 4))
    assert np.array_equal(group_project([alpha], 4)[0], hard_threshold(alpha, 4))


def test_hard_threshold_is_idempotent(rng):
    for _ in range(50):
        alpha = rng.standard_normal(12)
        s = int(rng.integers(1, 13))
        once = hard_threshold(alpha, s)
        assert np.array_equal(hard_threshold(once, s), once)


def test_group_project_tie_keeps_first_coordinate():
    out = group_project([[1.0, -1.0], [-1.0, 1.0]], 1)
    assert np.array_equal(out, [[1.0, 0.0], [-1.0, 0.0]])


def test_group_project_support_ignores_positive_scaling(rng):
    for _ in range(50):
        alphas = rng.standard_normal((3, 8))
        c = float(rng.uniform(0.01, 100.0))
        support = np.flatnonzero(group_project(alphas, 3)[0])
        scaled = group_project(c * alphas, 3)
        assert np.array_equal(np.flatnonzero(scaled[0]), support)
        assert np.array_equal(scaled[:, support], c * alphas[:, support])


def test_group_project_errors():
    with pytest.raises(ParameterError):
        group_project(np.zeros((0, 3)), 1)
    with pytest.raises(ParameterError):
        group_project(np.ones((2, 3)), 4)
    with pytest.raises(DomainError):
        group_project(np.array([[np.inf, 1.0]]), 1)


def test_sparsity_budget():
    assert SparsityBudget(3).q == 3
    assert SparsityBudget(2, 5).q == 5
    with pytest.raises(ParameterError):
        SparsityBudget(3, 2)
    with pytest.raises(ParameterError):
        SparsityBudget(0)
    with pytest.raises(ParameterError):
        SparsityBudget(2, 6).validate(5)
    assert SparsityBudget(2, 5).validate(5).q == 5
