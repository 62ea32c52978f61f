"""Federated IHT with group projection over an in-process message boundary.

Clients hold their data and only ever send gradients, initial estimates and
cluster labels; the server sees messages and its own state, never (x, y).

Wire layout of every message (little-endian): u32 task_id (center_id for
center broadcasts), u32 round, then the payload as float64 values, or a
single u32 for labels.
"""

import logging
import struct
import threading
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .central import (
    CentralConfig,
    FederationState,
    init_assignment,
    kmeans,
    partition_from_labels,
    prox_rows,
    solve_central,
    solve_central_oracle,
)
from .errors import DivergenceError, ParameterError, ProtocolError, ShapeError
from .huber import huber_objective
from .local_iht import (
    DIVERGENCE_LIMIT,
    LOSSES,
    LocalFitConfig,
    local_iht_fit,
    loss_gradient,
    loss_objective,
)
from .projection import SparsityBudget, group_project, hard_threshold

logger = logging.getLogger(__name__)

MODES = ('adaptive', 'oracle-labels', 'pooled-ml')
SERVER = 'server'
_HEADER = struct.Struct('<II')


def _pack_vector(first, round_, vector):
    return _HEADER.pack(first, round_) + np.asarray(vector, dtype='<f8').tobytes()


def _unpack_vector(raw):
    first, round_ = _HEADER.unpack_from(raw)
    vector = np.frombuffer(raw[_HEADER.size:], dtype='<f8').astype(np.float64)
    return first, round_, vector


@dataclass(frozen=True)
class GradientMessage:
    task_id: int
    round: int
    gradient: np.ndarray
    kind = 'gradient'

    def to_bytes(self):
        return _pack_vector(self.task_id, self.round, self.gradient)

    @classmethod
    def from_bytes(cls, raw):
        return cls(*_unpack_vector(raw))


@dataclass(frozen=True)
class ModelMessage:
    task_id: int
    round: int
    beta_hat: np.ndarray
    kind = 'model'

    def to_bytes(self):
        return _pack_vector(self.task_id, self.round, self.beta_hat)

    @classmethod
    def from_bytes(cls, raw):
        return cls(*_unpack_vector(raw))


@dataclass(frozen=True)
class CenterMessage:
    center_id: int
    round: int
    center: np.ndarray
    kind = 'center'

    @property
    def task_id(self):
        return self.center_id

    def to_bytes(self):
        return _pack_vector(self.center_id, self.round, self.center)

    @classmethod
    def from_bytes(cls, raw):
        return cls(*_unpack_vector(raw))


@dataclass(frozen=True)
class LabelMessage:
    task_id: int
    round: int
    label: int
    kind = 'label'

    def to_bytes(self):
        return _HEADER.pack(self.task_id, self.round) + struct.pack('<I', self.label)

    @classmethod
    def from_bytes(cls, raw):
        task_id, round_ = _HEADER.unpack_from(raw)
        (label,) = struct.unpack_from('<I', raw, _HEADER.size)
        return cls(task_id, round_, label)


class Mailbox:
    """In-process transport with round barriers and per-kind message counts"""

    def __init__(self):
        self._lock = threading.Lock()
        self._queues = defaultdict(list)
        self._broadcasts = defaultdict(list)
        self._counts = Counter()

    def post(self, recipient, message):
        with self._lock:
            self._queues[(recipient, message.kind, message.round)].append(message)
            self._counts[(message.round, message.kind)] += 1

    def broadcast(self, message):
        """Publish to every client; earlier rounds of the same kind are dropped"""
        with self._lock:
            stale = [key for key in self._broadcasts if key[0] == message.kind and key[1] < message.round]
            for key in stale:
                del self._broadcasts[key]
            self._broadcasts[(message.kind, message.round)].append(message)
            self._counts[(message.round, message.kind)] += 1

    def read_broadcast(self, kind, round_, expected):
        with self._lock:
            messages = sorted(self._broadcasts.get((kind, round_), []), key=lambda msg: msg.task_id)
        ids = [msg.task_id for msg in messages]
        if ids != list(range(expected)):
            raise ProtocolError(
                f"Round {round_}: expected {expected} '{kind}' broadcasts, got ids {ids}"
            )
        return messages

    def collect(self, recipient, kind, round_, expected_ids):
        """Pop every ``kind`` message for ``recipient`` in ``round_``, ordered by task id"""
        with self._lock:
            messages = self._queues.pop((recipient, kind, round_), [])
        by_id = {}
        for msg in messages:
            if msg.task_id in by_id:
                raise ProtocolError(f"Round {round_}: duplicate '{kind}' message from task {msg.task_id}")
            by_id[msg.task_id] = msg
        missing = [task for task in expected_ids if task not in by_id]
        if missing:
            raise ProtocolError(f"Round {round_}: missing '{kind}' messages from tasks {missing}")
        unexpected = sorted(set(by_id) - set(expected_ids))
        if unexpected:
            raise ProtocolError(f"Round {round_}: unexpected '{kind}' messages from tasks {unexpected}")
        return [by_id[task] for task in sorted(expected_ids)]

    def broadcast_rounds(self, kind):
        """Rounds whose ``kind`` broadcasts are still held"""
        with self._lock:
            return sorted(round_ for key_kind, round_ in self._broadcasts if key_kind == kind)

    def count(self, round_, kind):
        with self._lock:
            return self._counts[(round_, kind)]

    def totals(self):
        """Number of messages sent per kind over the whole run"""
        with self._lock:
            totals = Counter()
            for (_, kind), n in self._counts.items():
                totals[kind] += n
            return dict(totals)


@dataclass(frozen=True)
class FederationConfig:
    """Everything a federated run needs besides the data"""

    rounds: int = 100
    local: LocalFitConfig = field(default_factory=LocalFitConfig)
    central: CentralConfig = field(default_factory=CentralConfig)
    budget: SparsityBudget = field(default_factory=lambda: SparsityBudget(3))
    loss: str = 'huber'
    mode: str = 'adaptive'
    partition: tuple = None
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ParameterError(f"rounds must be at least 1, got {self.rounds}")
        if self.loss not in LOSSES:
            raise ParameterError(f"Unknown loss '{self.loss}', expected one of {LOSSES}")
        if self.mode not in MODES:
            raise ParameterError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        if self.mode == 'oracle-labels' and not self.partition:
            raise ParameterError("oracle-labels mode needs a partition of the tasks")
        if self.workers < 1:
            raise ParameterError(f"workers must be at least 1, got {self.workers}")

    @property
    def eta(self):
        return self.local.eta

    @property
    def sigma(self):
        return self.local.sigma


@dataclass
class RoundRecord:
    round: int
    objective: float
    error: float = float('nan')
    relabelled: int = 0


@dataclass
class FederatedResult:
    estimates: np.ndarray
    labels: np.ndarray
    centers: np.ndarray
    state: FederationState
    trace: list = field(default_factory=list)
    message_counts: dict = field(default_factory=dict)


class FederatedClient:
    """One task: owns its dataset and exposes only gradients, objectives and labels"""

    def __init__(self, dataset, mailbox, loss='huber', sigma=3.0):
        self._data = dataset
        self._mailbox = mailbox
        self._loss = loss
        self._sigma = sigma
        self.task_id = dataset.task_id
        self.beta_hat = None

    @property
    def p(self):
        return self._data.p

    def gradient(self, beta):
        return loss_gradient(self._data, beta, self._loss, self._sigma)

    def objective(self, beta):
        return loss_objective(self._data, beta, self._loss, self._sigma)

    def huber_objective(self, beta):
        return huber_objective(self._data, beta, self._sigma)

    def fit_local(self, local_cfg):
        self.beta_hat = local_iht_fit(self._data, replace(local_cfg, loss=self._loss))
        return self.beta_hat

    def upload_model(self, round_):
        self._mailbox.post(SERVER, ModelMessage(self.task_id, round_, self.beta_hat.copy()))

    def upload_gradient(self, round_):
        grad = self.gradient(self.beta_hat)
        self._mailbox.post(SERVER, GradientMessage(self.task_id, round_, grad))

    def choose_label(self, round_, k):
        centers = self._mailbox.read_broadcast('center', round_, k)
        label = init_assignment(np.array([msg.center for msg in centers]), [self.objective])[0]
        self._mailbox.post(SERVER, LabelMessage(self.task_id, round_, int(label)))

    def receive(self, round_):
        (msg,) = self._mailbox.collect(self.task_id, 'model', round_, [self.task_id])
        self.beta_hat = msg.beta_hat.copy()


class FederatedServer:
    """Central update: group projection, central solve, sparse projection"""

    def __init__(self, mailbox, task_ids, cfg):
        self._mailbox = mailbox
        self.task_ids = list(task_ids)
        self.cfg = cfg
        self.estimates = None
        self.state = None
        self._candidates = None
        self._central = replace(cfg.central, reinit_each_round=False)

    @property
    def adaptive(self):
        return self.cfg.mode == 'adaptive'

    def collect_initial(self, round_):
        models = self._mailbox.collect(SERVER, 'model', round_, self.task_ids)
        self.estimates = np.array([msg.beta_hat for msg in models])

    def broadcast_centers(self, round_, points):
        self._candidates, _ = kmeans(
            points, self._central.k, self._central.kmeans_restarts, self._central.seed
        )
        for center_id, center in enumerate(self._candidates):
            self._mailbox.broadcast(CenterMessage(center_id, round_, center.copy()))

    def collect_labels(self, round_):
        replies = self._mailbox.collect(SERVER, 'label', round_, self.task_ids)
        labels = np.array([msg.label for msg in replies], dtype=np.int64)
        deltas = np.zeros_like(self.estimates)
        return FederationState(
            beta=self.estimates.copy(),
            beta_tilde=self._candidates[labels] + deltas,
            labels=labels,
            centers=self._candidates.copy(),
            deltas=deltas,
        )

    def _solve(self, inputs, warm):
        if self.adaptive:
            return solve_central(inputs, self._central, warm=warm)
        return solve_central_oracle(inputs, self.cfg.partition, self._central, warm=warm)

    def initial_solve(self, warm=None):
        self.state = self._solve(self.estimates, warm)
        logger.debug(f"Initial labels: {self.state.labels.tolist()}")
        return self.state

    def groups(self):
        if self.adaptive:
            return partition_from_labels(self.state.labels)
        return [list(group) for group in self.cfg.partition]

    def step(self, round_, warm=None):
        grads = self._mailbox.collect(SERVER, 'gradient', round_, self.task_ids)
        gradients = np.array([msg.gradient for msg in grads])
        descent = self.estimates - self.cfg.eta * gradients
        if not np.all(np.isfinite(descent)):
            raise DivergenceError(
                f"Round {round_}: non-finite descent step with step size eta={self.cfg.eta}",
                eta=self.cfg.eta,
            )
        projected = np.zeros_like(descent)
        for members in self.groups():
            projected[members] = group_project(descent[members], self.cfg.budget.q)

        self.state = self._solve(projected, self.state if warm is None else warm)
        s = self.cfg.budget.s
        self.estimates = np.array([hard_threshold(row, s) for row in self.state.beta_tilde])
        for index, task in enumerate(self.task_ids):
            beta_hat = self.estimates[index]
            if np.count_nonzero(beta_hat) > s:
                raise ProtocolError(f"Round {round_}: model for task {task} exceeds s={s}")
            self._mailbox.post(task, ModelMessage(task, round_, beta_hat.copy()))
        return self.state


def _validate_tasks(datasets, cfg):
    if not datasets:
        raise ParameterError("At least one task is required")
    p = datasets[0].p
    for d in datasets:
        if d.p != p:
            raise ShapeError(f"Task {d.task_id} has p={d.p}, expected p={p}")
    ids = [d.task_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ParameterError(f"Task ids must be unique, got {ids}")
    cfg.budget.validate(p)
    if cfg.mode != 'oracle-labels' and cfg.central.k > len(datasets):
        raise ParameterError(f"k={cfg.central.k} exceeds the number of tasks M={len(datasets)}")
    return p


def _initial_estimates(datasets, cfg, init_betas, fit):
    s = cfg.budget.s
    if init_betas is None:
        local_cfg = replace(cfg.local, s=s, loss=cfg.loss)
        return np.array([fit(d, local_cfg) for d in datasets])
    init = np.array(init_betas, dtype=np.float64)
    if init.shape != (len(datasets), datasets[0].p):
        raise ShapeError(f"init_betas has shape {init.shape}, expected {(len(datasets), datasets[0].p)}")
    for m, row in enumerate(init):
        if np.count_nonzero(row) > s:
            raise ParameterError(f"Initial estimate of task {m} has more than s={s} nonzeros")
    return init


def _record(round_, estimates, objectives, truth_betas, previous_labels, labels):
    values = [objective(beta) for objective, beta in zip(objectives, estimates)]
    value = float(np.mean(values))
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise DivergenceError(f"Round {round_}: mean Huber objective {value:.3g} diverged")
    error = float('nan')
    if truth_betas is not None:
        error = float(np.mean(np.sum((estimates - truth_betas) ** 2, axis=1)))
    relabelled = 0 if previous_labels is None else int(np.sum(previous_labels != labels))
    logger.debug(f"Round {round_}: objective {value:.6g}, error {error:.4g}, relabelled {relabelled}")
    return RoundRecord(round_, value, error, relabelled)


def _map(workers, fn, items):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def federated_fit(datasets, cfg, init_betas=None, truth_betas=None):
    """Run ``cfg.rounds`` federation rounds and return the final estimates.

    ``init_betas`` defaults to each client's local IHT fit. ``truth_betas``
    only feeds the per-round error column of the trace.
    """
    if cfg.mode == 'pooled-ml':
        return pooled_ml_fit(datasets, cfg, init_betas=init_betas, truth_betas=truth_betas)
    _validate_tasks(datasets, cfg)

    mailbox = Mailbox()
    clients = [FederatedClient(d, mailbox, cfg.loss, cfg.sigma) for d in datasets]
    server = FederatedServer(mailbox, [c.task_id for c in clients], cfg)

    if init_betas is None:
        _map(cfg.workers, lambda c: c.fit_local(replace(cfg.local, s=cfg.budget.s)), clients)
    else:
        init = _initial_estimates(datasets, cfg, init_betas, None)
        for client, beta in zip(clients, init):
            client.beta_hat = beta.copy()

    for client in clients:
        client.upload_model(0)
    server.collect_initial(0)

    def exchange_labels(round_, points):
        server.broadcast_centers(round_, points)
        for client in clients:
            client.choose_label(round_, cfg.central.k)
        return server.collect_labels(round_)

    warm = exchange_labels(0, server.estimates) if server.adaptive else None
    state = server.initial_solve(warm)
    objectives = [c.huber_objective for c in clients]
    trace = [_record(0, server.estimates, objectives, truth_betas, None, state.labels)]
    logger.info(f"Federation of {len(clients)} tasks initialised, {cfg.rounds} rounds ({cfg.mode}, {cfg.loss})")

    for round_ in range(1, cfg.rounds + 1):
        previous_labels = server.state.labels.copy()
        _map(cfg.workers, lambda c: c.upload_gradient(round_), clients)
        warm = None
        if server.adaptive and cfg.central.reinit_each_round:
            warm = exchange_labels(round_, server.estimates)
        state = server.step(round_, warm)
        for client in clients:
            client.receive(round_)
        trace.append(
            _record(round_, server.estimates, objectives, truth_betas, previous_labels, state.labels)
        )

    return FederatedResult(
        estimates=server.estimates.copy(),
        labels=state.labels.copy(),
        centers=state.centers.copy(),
        state=state,
        trace=trace,
        message_counts=mailbox.totals(),
    )


def pooled_ml_fit(datasets, cfg, init_betas=None, truth_betas=None):
    """Pooled-data baseline: per-task IHT steps alternated with a fusion solve.

    Requires full data access. Centers are hard-thresholded to q after every
    fusion solve and offsets are recomputed against the sparse centers.
    """
    _validate_tasks(datasets, cfg)
    s, q = cfg.budget.s, cfg.budget.q
    eta, sigma, loss = cfg.eta, cfg.sigma, cfg.loss
    central = replace(cfg.central, reinit_each_round=False)

    estimates = _initial_estimates(datasets, cfg, init_betas, local_iht_fit)
    objectives = [lambda beta, d=d: loss_objective(d, beta, loss, sigma) for d in datasets]
    huber = [lambda beta, d=d: huber_objective(d, beta, sigma) for d in datasets]

    state = solve_central(estimates, central, client_objectives=objectives)
    trace = [_record(0, estimates, huber, truth_betas, None, state.labels)]

    for round_ in range(1, cfg.rounds + 1):
        previous_labels = state.labels.copy()
        steps = np.array([
            beta - eta * loss_gradient(d, beta, loss, sigma) for d, beta in zip(datasets, estimates)
        ])
        if not np.all(np.isfinite(steps)):
            raise DivergenceError(f"Round {round_}: non-finite step with step size eta={eta}", eta=eta)
        iterates = np.array([hard_threshold(row, s) for row in steps])

        state = solve_central(iterates, central, warm=state)
        centers = np.array([hard_threshold(center, q) for center in state.centers])
        deltas = prox_rows(iterates - centers[state.labels], central.lam)
        fused = centers[state.labels] + deltas
        state = replace(state, beta_tilde=fused, centers=centers, deltas=deltas)
        estimates = np.array([hard_threshold(row, s) for row in fused])
        trace.append(_record(round_, estimates, huber, truth_betas, previous_labels, state.labels))

    return FederatedResult(
        estimates=estimates,
        labels=state.labels.copy(),
        centers=state.centers.copy(),
        state=state,
        trace=trace,
    )
