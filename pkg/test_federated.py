"""Tests for the federated protocol, its message boundary and the pooled baseline"""

import struct

import numpy as np
import pytest

from fedhuber.core.central import CentralConfig, partition_from_labels
from fedhuber.core.errors import DivergenceError, ParameterError, ProtocolError, ShapeError
from fedhuber.core.federated import (
    CenterMessage,
    FederatedServer,
    FederationConfig,
    GradientMessage,
    LabelMessage,
    Mailbox,
    ModelMessage,
    federated_fit,
    pooled_ml_fit,
)
from fedhuber.core.huber import TaskDataset
from fedhuber.core.local_iht import LocalFitConfig, local_iht_path
from fedhuber.core.metrics import rand_index
from fedhuber.core.projection import SparsityBudget


def _config(rounds=5, eta=0.1, s=3, k=2, lam=0.1, **kwargs):
    return FederationConfig(
        rounds=rounds,
        local=LocalFitConfig(eta=eta, s=s, t_max=300),
        central=CentralConfig(lam=lam, k=k),
        budget=SparsityBudget(s),
        **kwargs,
    )


def test_single_task_reduces_to_local_iht(make_task):
    """M=1, K=1, lambda=0: every round is one local IHT step"""
    d, _ = make_task(n=80, p=10, seed=1)
    rounds = 20
    cfg = _config(rounds=rounds, eta=0.1, k=1, lam=0.0)
    result = federated_fit([d], cfg, init_betas=np.zeros((1, d.p)))

    path = list(local_iht_path(d, LocalFitConfig(eta=0.1, s=3, t_max=rounds, tol=0.0)))
    assert len(path) == rounds
    assert np.allclose(result.estimates[0], path[-1], rtol=1e-9, atol=1e-12)


def test_identical_tasks_get_identical_estimates(make_task):
    d, _ = make_task(seed=2)
    datasets = [TaskDataset(d.x, d.y, task_id=m) for m in range(3)]
    result = federated_fit(datasets, _config(rounds=8, k=1, lam=0.5))
    assert np.array_equal(result.estimates[0], result.estimates[1])
    assert np.array_equal(result.estimates[0], result.estimates[2])


def test_objective_decreases_from_zero_start(small_setting):
    datasets, truth = small_setting
    cfg = _config(rounds=30, eta=0.1)
    result = federated_fit(datasets, cfg, init_betas=np.zeros((len(datasets), datasets[0].p)),
                           truth_betas=truth.betas_true)
    assert [record.round for record in result.trace] == list(range(31))
    assert result.trace[-1].objective < result.trace[0].objective
    assert result.trace[-1].error < result.trace[0].error
    assert all(np.count_nonzero(row) <= 3 for row in result.estimates)


def test_message_counts(small_setting):
    datasets, _ = small_setting
    m, rounds = len(datasets), 3
    result = federated_fit(datasets, _config(rounds=rounds))
    assert result.message_counts == {
        'model': m + m * rounds,
        'gradient': m * rounds,
        'center': 2,
        'label': m,
    }

    cfg = FederationConfig(
        rounds=rounds,
        local=LocalFitConfig(eta=0.1, s=3, t_max=300),
        central=CentralConfig(lam=0.1, k=2, reinit_each_round=True),
        budget=SparsityBudget(3),
    )
    result = federated_fit(datasets, cfg)
    assert result.message_counts['center'] == 2 * (rounds + 1)
    assert result.message_counts['label'] == m * (rounds + 1)


def test_server_never_holds_task_data(small_setting, monkeypatch):
    datasets, _ = small_setting
    servers = []
    original = FederatedServer.__init__

    def spy(self, *args, **kwargs):
        original(self, *args, **kwargs)
        servers.append(self)

    sent = []
    post = Mailbox.post

    def record(self, recipient, message):
        sent.append(message)
        post(self, recipient, message)

    monkeypatch.setattr(FederatedServer, '__init__', spy)
    monkeypatch.setattr(Mailbox, 'post', record)
    federated_fit(datasets, _config(rounds=2))

    (server,) = servers
    assert not any(isinstance(value, TaskDataset) for value in vars(server).values())
    assert {type(msg) for msg in sent} == {ModelMessage, GradientMessage, LabelMessage}
    p = datasets[0].p
    for msg in sent:
        if isinstance(msg, LabelMessage):
            assert len(msg.to_bytes()) == 12
        else:
            assert len(msg.to_bytes()) == 8 + 8 * p


def test_wire_format():
    vector = np.array([1.5, -2.0, 0.0])
    raw = GradientMessage(3, 7, vector).to_bytes()
    assert raw[:8] == struct.pack('<II', 3, 7)
    assert raw[8:] == struct.pack('<3d', 1.5, -2.0, 0.0)
    decoded = GradientMessage.from_bytes(raw)
    assert (decoded.task_id, decoded.round) == (3, 7)
    assert np.array_equal(decoded.gradient, vector)

    assert LabelMessage(2, 0, 1).to_bytes() == struct.pack('<III', 2, 0, 1)
    assert LabelMessage.from_bytes(struct.pack('<III', 4, 1, 0)) == LabelMessage(4, 1, 0)
    assert CenterMessage(1, 0, vector).task_id == 1
    assert ModelMessage.from_bytes(ModelMessage(0, 2, vector).to_bytes()).round == 2


def test_mailbox_enforces_round_barrier():
    mailbox = Mailbox()
    vector = np.zeros(2)
    mailbox.post('server', GradientMessage(0, 1, vector))
    with pytest.raises(ProtocolError, match='missing'):
        mailbox.collect('server', 'gradient', 1, [0, 1])

    mailbox.post('server', GradientMessage(0, 1, vector))
    mailbox.post('server', GradientMessage(0, 1, vector))
    with pytest.raises(ProtocolError, match='duplicate'):
        mailbox.collect('server', 'gradient', 1, [0])

    mailbox.post('server', GradientMessage(5, 2, vector))
    mailbox.post('server', GradientMessage(0, 2, vector))
    with pytest.raises(ProtocolError, match='unexpected'):
        mailbox.collect('server', 'gradient', 2, [0])

    mailbox.broadcast(CenterMessage(0, 0, vector))
    with pytest.raises(ProtocolError):
        mailbox.read_broadcast('center', 0, 2)
    assert mailbox.count(1, 'gradient') == 3
    assert mailbox.totals() == {'gradient': 5, 'center': 1}


def test_mailbox_keeps_only_latest_broadcast_round():
    mailbox = Mailbox()
    vector = np.zeros(2)
    for round_ in range(3):
        mailbox.broadcast(CenterMessage(0, round_, vector))
        mailbox.broadcast(CenterMessage(1, round_, vector))
    assert mailbox.broadcast_rounds('center') == [2]
    assert [msg.task_id for msg in mailbox.read_broadcast('center', 2, 2)] == [0, 1]
    with pytest.raises(ProtocolError):
        mailbox.read_broadcast('center', 0, 2)
    assert mailbox.totals() == {'center': 6}


def test_reinitialised_run_holds_one_broadcast_round(small_setting, monkeypatch):
    datasets, _ = small_setting
    mailboxes = []
    original = Mailbox.__init__

    def spy(self):
        original(self)
        mailboxes.append(self)

    monkeypatch.setattr(Mailbox, '__init__', spy)
    rounds = 6
    federated_fit(datasets, FederationConfig(
        rounds=rounds,
        local=LocalFitConfig(eta=0.1, s=3, t_max=300),
        central=CentralConfig(lam=0.1, k=2, reinit_each_round=True),
        budget=SparsityBudget(3),
    ))
    (mailbox,) = mailboxes
    assert mailbox.totals()['center'] == 2 * (rounds + 1)
    assert len(mailbox.broadcast_rounds('center')) == 1


def test_huber_with_huge_threshold_matches_squared_loss(small_setting):
    datasets, _ = small_setting
    huber = federated_fit(datasets, FederationConfig(
        rounds=5,
        local=LocalFitConfig(eta=0.1, sigma=1e8, s=3, t_max=300),
        central=CentralConfig(lam=0.1, k=2),
    ))
    squared = federated_fit(datasets, FederationConfig(
        rounds=5,
        local=LocalFitConfig(eta=0.1, sigma=1e8, s=3, t_max=300),
        central=CentralConfig(lam=0.1, k=2),
        loss='squared',
    ))
    assert np.array_equal(huber.estimates, squared.estimates)


def test_divergence_is_reported(small_setting):
    datasets, _ = small_setting
    cfg = _config(rounds=3, eta=1e13)
    with pytest.raises(DivergenceError):
        federated_fit(datasets, cfg, init_betas=np.zeros((len(datasets), datasets[0].p)))


def test_parallel_gradients_give_same_result(small_setting):
    datasets, _ = small_setting
    serial = federated_fit(datasets, _config(rounds=4))
    parallel = federated_fit(datasets, _config(rounds=4, workers=2))
    assert np.array_equal(serial.estimates, parallel.estimates)
    assert np.array_equal(serial.labels, parallel.labels)


def test_recovers_groups_on_separated_setting(small_setting):
    datasets, truth = small_setting
    result = federated_fit(datasets, _config(rounds=30))
    assert rand_index(result.labels, truth.labels_true) == 1.0


def test_oracle_labels_mode(small_setting):
    datasets, truth = small_setting
    partition = tuple(tuple(g) for g in partition_from_labels(truth.labels_true))
    result = federated_fit(datasets, _config(rounds=3, mode='oracle-labels', partition=partition))
    assert np.array_equal(result.labels, truth.labels_true)
    assert 'center' not in result.message_counts
    assert 'label' not in result.message_counts
    with pytest.raises(ParameterError):
        _config(mode='oracle-labels')


def test_pooled_zero_penalty_single_task_is_local_iht(make_task):
    d, _ = make_task(n=80, p=10, seed=3)
    cfg = _config(rounds=15, eta=0.1, k=1, lam=0.0)
    result = pooled_ml_fit([d], cfg, init_betas=np.zeros((1, d.p)))
    path = list(local_iht_path(d, LocalFitConfig(eta=0.1, s=3, t_max=15, tol=0.0)))
    assert np.allclose(result.estimates[0], path[-1], rtol=1e-9, atol=1e-12)


def test_pooled_large_penalty_fuses_tasks(small_setting):
    datasets, _ = small_setting
    result = federated_fit(datasets, _config(rounds=5, k=1, lam=1e6, mode='pooled-ml'))
    for row in result.estimates[1:]:
        assert np.array_equal(row, result.estimates[0])
    assert result.message_counts == {}


def test_input_validation(small_setting, make_task):
    datasets, _ = small_setting
    with pytest.raises(ParameterError):
        federated_fit(datasets[:1], _config(k=2))
    other, _ = make_task(p=7, task_id=99)
    with pytest.raises(ShapeError):
        federated_fit(datasets + [other], _config())
    clash = TaskDataset(datasets[0].x, datasets[0].y, task_id=1)
    with pytest.raises(ParameterError):
        federated_fit([datasets[0], datasets[1], clash], _config())
    with pytest.raises(ParameterError):
        federated_fit(datasets, _config(), init_betas=np.ones((len(datasets), datasets[0].p)))
    with pytest.raises(ParameterError):
        _config(rounds=0)
