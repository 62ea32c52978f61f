import numpy as np
import pytest

from fedhuber.core.huber import TaskDataset
from fedhuber.core.simgen import ScenarioConfig, gen_setting


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='Run Monte-Carlo acceptance tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_task():
    """Factory for a sparse linear-regression task with Gaussian noise"""

    def make(n=60, p=12, s0=3, noise=0.1, seed=0, task_id=0, beta=None):
        generator = np.random.default_rng(seed)
        x = generator.standard_normal((n, p))
        if beta is None:
            beta = np.zeros(p)
            beta[:s0] = generator.uniform(1.0, 2.0, size=s0) * generator.choice([-1, 1], size=s0)
        y = x @ beta + noise * generator.standard_normal(n)
        return TaskDataset(x, y, task_id=task_id), np.asarray(beta, dtype=float)

    return make


@pytest.fixture
def small_setting():
    """Small Setting-1 instance with Gaussian noise"""
    return gen_setting(ScenarioConfig(setting='S1', n=60, p=15, m=6, noise='normal', seed=7))
