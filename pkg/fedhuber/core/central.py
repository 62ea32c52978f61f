"""Server-side clustering and fusion solver.

Minimises the reparameterised central objective

    sum_m 1/2 ||theta_{z_m} + delta_m - beta_m||^2 + lam ||delta_m||_2

over centers theta, labels z and offsets delta by alternating a Lloyd-style
(theta, z) pass with a proximal-gradient loop on delta. Every pass is a
descent step, so the objective is non-increasing across outer iterations.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .errors import DomainError, NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

DESCENT_SLACK = 1e-9


@dataclass(frozen=True)
class CentralConfig:
    lam: float = 0.1
    k: int = 2
    eta1: float = 1.0
    inner_iters: int = 100
    prox_iters: int = 200
    prox_tol: float = 1e-8
    tol: float = 1e-6
    kmeans_restarts: int = 10
    seed: int = 0
    reinit_each_round: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ParameterError(f"lam must be nonnegative, got {self.lam}")
        if self.k < 1:
            raise ParameterError(f"k must be at least 1, got {self.k}")
        if not (0 < self.eta1 <= 1):
            raise ParameterError(f"eta1 must lie in (0, 1], got {self.eta1}")
        if self.inner_iters < 1 or self.prox_iters < 1:
            raise ParameterError("inner_iters and prox_iters must be at least 1")
        if self.tol < 0 or self.prox_tol < 0:
            raise ParameterError("Tolerances must be nonnegative")
        if self.kmeans_restarts < 1:
            raise ParameterError(f"kmeans_restarts must be at least 1, got {self.kmeans_restarts}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class FederationState:
    """Solution of one central solve.

    ``beta`` holds the solver inputs, ``beta_tilde`` the fused estimates
    theta_{z_m} + delta_m before sparse projection.
    """

    beta: np.ndarray
    beta_tilde: np.ndarray
    labels: np.ndarray
    centers: np.ndarray
    deltas: np.ndarray
    objective: float = float('nan')
    history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self):
        return self.centers.shape[0]

    def copy(self):
        return FederationState(
            beta=self.beta.copy(),
            beta_tilde=self.beta_tilde.copy(),
            labels=self.labels.copy(),
            centers=self.centers.copy(),
            deltas=self.deltas.copy(),
            objective=self.objective,
            history=list(self.history),
            iterations=self.iterations,
        )


def _as_points(inputs):
    points = np.asarray(inputs, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ShapeError(f"Expected a non-empty M x p array of vectors, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise NumericError("Central solver received non-finite inputs")
    return points


def prox_l2(x, c):
    """Block soft-thresholding (1 - c/||x||)_+ x"""
    x = np.asarray(x, dtype=np.float64)
    if c < 0:
        raise ParameterError(f"prox_l2 threshold must be nonnegative, got {c}")
    if not np.all(np.isfinite(x)):
        raise DomainError("prox_l2 received non-finite input")
    if c == 0:
        return x.copy()
    norm = np.linalg.norm(x)
    if norm <= c:
        return np.zeros_like(x)
    return (1.0 - c / norm) * x


def prox_rows(v, c):
    if c == 0:
        return v.copy()
    norms = np.linalg.norm(v, axis=1)
    scale = np.zeros_like(norms)
    np.divide(c, norms, out=scale, where=norms > c)
    factor = np.where(norms > c, 1.0 - scale, 0.0)
    return v * factor[:, None]


def kmeans(points, k, restarts=10, seed=0):
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` runs.

    Returns (centers k x p, labels length M).
    """
    points = _as_points(points)
    m = points.shape[0]
    if k < 1 or k > m:
        raise ParameterError(f"k-means needs 1 <= k <= M, got k={k}, M={m}")
    model = KMeans(
        n_clusters=k,
        init='k-means++',
        n_init=restarts,
        random_state=int(seed) % (2 ** 32),
    )
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', category=ConvergenceWarning)
        model.fit(points)
    return model.cluster_centers_.astype(np.float64), model.labels_.astype(np.int64)


def init_assignment(candidate_centers, client_objectives):
    """Each task picks the candidate center minimising its own local objective.

    ``client_objectives`` holds one callable per task, mapping a coefficient
    vector to that task's loss. Ties go to the smaller center index.
    """
    centers = np.asarray(candidate_centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 1:
        raise ParameterError("init_assignment needs at least one candidate center")
    labels = np.empty(len(client_objectives), dtype=np.int64)
    for m, objective in enumerate(client_objectives):
        values = np.array([objective(center) for center in centers])
        labels[m] = int(np.argmin(values))
    return labels


def central_objective(inputs, labels, centers, deltas, lam):
    fitted = centers[labels] + deltas
    fit = 0.5 * np.sum((fitted - inputs) ** 2)
    penalty = lam * np.sum(np.linalg.norm(deltas, axis=1))
    return float(fit + penalty)


def _check_descent(before, after, stage):
    if not np.isfinite(after):
        raise NumericError(f"Central objective became non-finite during {stage}")
    if after > before + DESCENT_SLACK * (1.0 + abs(before)):
        raise NumericError(
            f"Central objective increased during {stage}: {before:.12g} -> {after:.12g}"
        )


def _cluster_means(shifted, labels, k):
    centers = np.zeros((k, shifted.shape[1]))
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c]:
            centers[c] = shifted[labels == c].mean(axis=0)
    return centers, counts


def update_centers(inputs, labels, deltas, k):
    """Center pass: theta_k = mean of (beta_m - delta_m) over its members.

    An empty cluster takes the point farthest from its own center among
    clusters with more than one member, then means are recomputed.
    """
    labels = labels.copy()
    shifted = inputs - deltas
    centers, counts = _cluster_means(shifted, labels, k)
    for empty in np.flatnonzero(counts == 0):
        distances = np.linalg.norm(shifted - centers[labels], axis=1)
        distances[counts[labels] <= 1] = -1.0
        donor = int(np.argmax(distances))
        logger.warning(
            f"Cluster {empty} is empty; reassigning task {donor} "
            f"(distance {distances[donor]:.4g} to its center)"
        )
        labels[donor] = empty
        centers, counts = _cluster_means(shifted, labels, k)
    return centers, labels


def update_labels(inputs, deltas, centers):
    """Label pass: each task joins the nearest center after removing its offset"""
    distances = cdist(inputs - deltas, centers, metric='sqeuclidean')
    return np.argmin(distances, axis=1).astype(np.int64)


def update_deltas(inputs, labels, centers, deltas, lam, eta1, prox_iters, prox_tol):
    """Proximal-gradient loop on the offsets with centers and labels fixed"""
    target = inputs - centers[labels]
    current = deltas.copy()
    for it in range(prox_iters):
        new = prox_rows(current - eta1 * (current - target), eta1 * lam)
        change = float(np.linalg.norm(new - current))
        current = new
        if change < prox_tol:
            break
    else:
        logger.debug(f"Offset loop hit prox_iters={prox_iters} (last change {change:.2e})")
    return current


def initial_state(inputs, cfg, client_objectives):
    """k-means on the inputs, then each task re-picks its center with its local objective"""
    candidates, _ = kmeans(inputs, cfg.k, cfg.kmeans_restarts, cfg.seed)
    labels = init_assignment(candidates, client_objectives)
    return candidates, labels


def _warm_parts(warm, inputs, k):
    m, p = inputs.shape
    labels = np.asarray(warm.labels, dtype=np.int64).copy()
    centers = np.asarray(warm.centers, dtype=np.float64).copy()
    deltas = np.asarray(warm.deltas, dtype=np.float64).copy()
    if labels.shape != (m,) or deltas.shape != (m, p) or centers.shape != (k, p):
        raise ShapeError(
            f"Warm state shapes labels={labels.shape}, centers={centers.shape}, "
            f"deltas={deltas.shape} do not match M={m}, p={p}, K={k}"
        )
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError(f"Warm labels outside [0, {k})")
    return labels, centers, deltas


def _finish(inputs, labels, centers, deltas, history, iterations, lam):
    if lam == 0:
        # offsets absorb everything, so beta_tilde is the input itself
        deltas = inputs - centers[labels]
        beta_tilde = inputs.copy()
    else:
        beta_tilde = centers[labels] + deltas

    if not np.all(np.isfinite(beta_tilde)):
        raise NumericError("Central solver produced non-finite estimates")
    return FederationState(
        beta=inputs.copy(),
        beta_tilde=beta_tilde,
        labels=labels,
        centers=centers,
        deltas=deltas,
        objective=history[-1],
        history=history,
        iterations=iterations,
    )


def solve_central(inputs, cfg, warm=None, client_objectives=None):
    """Alternating minimisation of the central objective.

    Without a warm state the labels are initialised by k-means followed by the
    clients' own reassignment, which needs ``client_objectives``.
    """
    inputs = _as_points(inputs)
    m = inputs.shape[0]
    if cfg.k > m:
        raise ParameterError(f"k={cfg.k} exceeds the number of tasks M={m}")

    if warm is None or cfg.reinit_each_round:
        if client_objectives is None:
            raise ParameterError("client_objectives are required when no warm state is given")
        centers, labels = initial_state(inputs, cfg, client_objectives)
        deltas = np.zeros_like(inputs)
    else:
        labels, centers, deltas = _warm_parts(warm, inputs, cfg.k)

    previous = central_objective(inputs, labels, centers, deltas, cfg.lam)
    history = [previous]
    iterations = 0
    for iterations in range(1, cfg.inner_iters + 1):
        centers, labels = update_centers(inputs, labels, deltas, cfg.k)
        after_centers = central_objective(inputs, labels, centers, deltas, cfg.lam)
        _check_descent(previous, after_centers, 'center update')

        labels = update_labels(inputs, deltas, centers)
        deltas = update_deltas(
            inputs, labels, centers, deltas, cfg.lam, cfg.eta1, cfg.prox_iters, cfg.prox_tol
        )
        current = central_objective(inputs, labels, centers, deltas, cfg.lam)
        _check_descent(after_centers, current, 'label and offset update')
        history.append(current)
        logger.debug(f"Central iteration {iterations}: objective {current:.10g}")
        if abs(previous - current) < cfg.tol:
            break
        previous = current

    return _finish(inputs, labels, centers, deltas, history, iterations, cfg.lam)


def partition_from_labels(labels):
    """Groups of task indices, one per distinct label in increasing label order"""
    labels = np.asarray(labels, dtype=np.int64)
    return [np.flatnonzero(labels == value).tolist() for value in np.unique(labels)]


def _labels_from_partition(groups, m):
    labels = np.full(m, -1, dtype=np.int64)
    for g, members in enumerate(groups):
        if len(members) == 0:
            raise ParameterError(f"Group {g} of the partition is empty")
        for task in members:
            if task < 0 or task >= m:
                raise ParameterError(f"Task index {task} outside [0, {m})")
            if labels[task] != -1:
                raise ParameterError(f"Task {task} appears in more than one group")
            labels[task] = g
    missing = np.flatnonzero(labels == -1)
    if missing.size:
        raise ParameterError(f"Tasks {missing.tolist()} are not assigned to any group")
    return labels


def solve_central_oracle(inputs, groups, cfg, warm=None):
    """Central solve with labels frozen to a known partition of the tasks"""
    inputs = _as_points(inputs)
    m = inputs.shape[0]
    labels = _labels_from_partition(groups, m)
    k = len(groups)

    deltas = np.zeros_like(inputs)
    if warm is not None and np.asarray(warm.deltas).shape == inputs.shape:
        deltas = np.asarray(warm.deltas, dtype=np.float64).copy()
    centers, _ = _cluster_means(inputs - deltas, labels, k)

    previous = central_objective(inputs, labels, centers, deltas, cfg.lam)
    history = [previous]
    iterations = 0
    for iterations in range(1, cfg.inner_iters + 1):
        centers, _ = _cluster_means(inputs - deltas, labels, k)
        deltas = update_deltas(
            inputs, labels, centers, deltas, cfg.lam, cfg.eta1, cfg.prox_iters, cfg.prox_tol
        )
        current = central_objective(inputs, labels, centers, deltas, cfg.lam)
        _check_descent(previous, current, 'oracle update')
        history.append(current)
        if abs(previous - current) < cfg.tol:
            break
        previous = current

    return _finish(inputs, labels, centers, deltas, history, iterations, cfg.lam)
