"""Tests for step-size selection and the model-selection criterion"""

from dataclasses import replace

import numpy as np
import pytest

from fedhuber.core.central import CentralConfig
from fedhuber.core.errors import ParameterError, TuningError
from fedhuber.core.federated import FederationConfig, federated_fit
from fedhuber.core.huber import TaskDataset, huber_objective
from fedhuber.core.local_iht import LocalFitConfig, local_iht_fit
from fedhuber.core.projection import SparsityBudget
from fedhuber.core.simgen import ScenarioConfig, gen_setting
from fedhuber.core.tuning import TuningGrid, select_eta, select_model, selection_criterion


@pytest.fixture
def template():
    return FederationConfig(
        rounds=5,
        local=LocalFitConfig(eta=0.1, s=3, t_max=300),
        central=CentralConfig(lam=0.1, k=2),
        budget=SparsityBudget(3),
    )


def test_criterion_is_mean_loss_plus_penalty(make_task):
    d, beta = make_task(n=60, p=12, noise=0.0, seed=1)
    value = selection_criterion([d], [beta], 3.0, s=3, k=2, c1=1.0, c2=1.5)
    assert np.isclose(value, np.log(12) / 60 * (3 + 3.0), rtol=0, atol=1e-12)

    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    a = TaskDataset(x, np.array([1.0, 0.0]), task_id=0)
    b = TaskDataset(x, np.array([0.0, 5.0]), task_id=1)
    # losses: 0.5, 0, 0, 2*5 - 2 = 8 with sigma 2 -> mean 2.125
    value = selection_criterion([a, b], np.zeros((2, 2)), 2.0, s=1, k=1, c1=2.0, c2=1.0)
    assert np.isclose(value, 2.125 + np.log(2) / 2 * 3.0)


def test_select_eta_picks_lowest_objective(make_task):
    d, _ = make_task(n=100, p=10, seed=2)
    cfg = LocalFitConfig(s=3, t_max=200)
    candidates = [0.001, 0.01, 0.1]
    values = [huber_objective(d, local_iht_fit(d, replace(cfg, eta=eta)), cfg.sigma) for eta in candidates]
    assert select_eta(d, candidates, cfg) == candidates[int(np.argmin(values))]
    assert select_eta(d, TuningGrid(eta_values=(0.1, 0.001, 0.01)), cfg) == candidates[int(np.argmin(values))]
    assert select_eta(d, [0.05], cfg) == 0.05


def test_select_eta_skips_divergent_steps(make_task):
    d, _ = make_task(seed=3)
    cfg = LocalFitConfig(s=3, t_max=50)
    assert select_eta(d, [0.1, 1e13], cfg) == 0.1
    with pytest.raises(TuningError):
        select_eta(d, [1e13, 1e14], cfg)
    with pytest.raises(ParameterError):
        select_eta(d, [], cfg)


def test_grid_points():
    grid = TuningGrid(k_values=(2, 1), s_values=(3, 2), q_values=(3,), lambda_values=(0.1,))
    assert grid.points() == [(1, 2, 3, 0.1), (1, 3, 3, 0.1), (2, 2, 3, 0.1), (2, 3, 3, 0.1)]
    assert TuningGrid(s_values=(2, 4)).points() == [(2, 2, 2, 0.1), (2, 4, 4, 0.1)]
    with pytest.raises(ParameterError):
        TuningGrid(k_values=())
    with pytest.raises(ParameterError):
        TuningGrid(c1=0.0)
    with pytest.raises(ParameterError):
        TuningGrid(eta_values=(0.0,))


def test_single_point_grid_reproduces_criterion(small_setting, template):
    datasets, _ = small_setting
    best, table = select_model(datasets, TuningGrid(k_values=(2,), s_values=(3,), lambda_values=(0.2,)), template)
    assert (best.central.k, best.budget.s, best.budget.q, best.central.lam) == (2, 3, 3, 0.2)
    assert len(table) == 1

    inits = np.array([local_iht_fit(d, template.local) for d in datasets])
    result = federated_fit(datasets, best, init_betas=inits)
    expected = selection_criterion(datasets, result.estimates, template.sigma, 3, 2)
    assert np.isclose(table[0]['criterion'], expected, rtol=0, atol=1e-12)


def test_table_follows_grid_and_picks_minimum(small_setting, template):
    datasets, _ = small_setting
    grid = TuningGrid(k_values=(1, 2, 10), lambda_values=(0.05, 0.5))
    best, table = select_model(datasets, grid, template, workers=2)
    assert [(row['k'], row['lam']) for row in table] == [(1, 0.05), (1, 0.5), (2, 0.05), (2, 0.5)]
    winner = min(table, key=lambda row: row['criterion'])
    assert (best.central.k, best.central.lam) == (winner['k'], winner['lam'])

    with pytest.raises(TuningError):
        select_model(datasets, TuningGrid(k_values=(50,)), template)


def test_failures_name_the_grid_point(small_setting, template):
    datasets, _ = small_setting
    with pytest.raises(TuningError, match='s=20'):
        select_model(datasets, TuningGrid(s_values=(20,)), template)

    diverging = replace(template, local=replace(template.local, eta=1e13))
    zeros = np.zeros((len(datasets), datasets[0].p))
    with pytest.raises(TuningError, match=r'K=2, s=3, q=3, lambda=0.1'):
        select_model(datasets, TuningGrid(), diverging, init_betas=zeros)


@pytest.mark.slow
def test_select_model_finds_two_clusters(template):
    # a strong fusion penalty keeps K=1 from absorbing the second group through offsets
    grid = TuningGrid(k_values=(1, 2, 3), s_values=(3,), lambda_values=(1.0,), eta_values=(0.1,))
    cfg = replace(template, rounds=30)
    hits = 0
    for seed in range(30):
        datasets, _ = gen_setting(ScenarioConfig(setting='S1', n=100, p=100, m=10, seed=seed))
        best, _ = select_model(datasets, grid, cfg, workers=4)
        hits += best.central.k == 2
    assert hits >= 0.8 * 30
