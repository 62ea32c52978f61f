"""Step-size and model selection.

Model selection minimises a BIC-like criterion on the training data:

    (1 / Mn) sum_m sum_i H_sigma(y_mi - x_mi' beta_m) + (log p / n) (c1 s + c2 K)
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, FedHuberError, ParameterError, TuningError
from .federated import federated_fit
from .huber import huber_loss, huber_objective
from .local_iht import local_iht_fit
from .projection import SparsityBudget, hard_threshold

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TuningGrid:
    k_values: tuple = (2,)
    s_values: tuple = (3,)
    q_values: tuple = ()
    lambda_values: tuple = (0.1,)
    eta_values: tuple = (0.01,)
    c1: float = 1.0
    c2: float = 1.5

    def __post_init__(self):
        for name in ('k_values', 's_values', 'lambda_values', 'eta_values'):
            values = tuple(getattr(self, name))
            if not values:
                raise ParameterError(f"Tuning grid '{name}' is empty")
            object.__setattr__(self, name, values)
        object.__setattr__(self, 'q_values', tuple(self.q_values))
        if min(self.k_values) < 1 or min(self.s_values) < 1:
            raise ParameterError("k and s grid values must be positive integers")
        if self.q_values and min(self.q_values) < 1:
            raise ParameterError("q grid values must be positive integers")
        if min(self.lambda_values) < 0:
            raise ParameterError("lambda grid values must be nonnegative")
        if min(self.eta_values) <= 0:
            raise ParameterError("eta grid values must be positive")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ParameterError(f"Criterion weights must be positive, got c1={self.c1}, c2={self.c2}")

    def points(self):
        """Grid points (K, s, q, lambda) in lexicographic order; q = s when no q grid is given"""
        out = []
        for k, s, lam in itertools.product(
            sorted(self.k_values), sorted(self.s_values), sorted(self.lambda_values)
        ):
            for q in sorted(self.q_values) or [s]:
                if q >= s:
                    out.append((k, s, q, lam))
        return sorted(out)


def select_eta(d, grid, cfg):
    """Step size with the lowest final training Huber objective; ties go to the smaller eta"""
    etas = sorted(getattr(grid, 'eta_values', grid))
    if not etas:
        raise ParameterError("Step-size grid is empty")
    best_eta, best_value = None, np.inf
    for eta in etas:
        try:
            beta = local_iht_fit(d, replace(cfg, eta=eta))
        except DivergenceError as e:
            logger.warning(f"Task {d.task_id}: step size {eta} diverged ({e})")
            continue
        value = huber_objective(d, beta, cfg.sigma)
        logger.debug(f"Task {d.task_id}: eta={eta} -> objective {value:.6g}")
        if value < best_value:
            best_eta, best_value = eta, value
    if best_eta is None:
        raise TuningError(f"Task {d.task_id}: every step size in {etas} diverged")
    return best_eta


def selection_criterion(datasets, estimates, sigma, s, k, c1=1.0, c2=1.5):
    losses = [huber_loss(d.residuals(beta), sigma) for d, beta in zip(datasets, estimates)]
    total = sum(len(values) for values in losses)
    n = total / len(datasets)
    p = datasets[0].p
    fit = float(sum(np.sum(values) for values in losses) / total)
    return fit + np.log(p) / n * (c1 * s + c2 * k)


def _local_inits(datasets, template, s, init_betas):
    if init_betas is not None:
        return np.array([hard_threshold(beta, s) for beta in init_betas])
    local_cfg = replace(template.local, s=s, loss=template.loss)
    return np.array([local_iht_fit(d, local_cfg) for d in datasets])


def select_model(datasets, grid, template, init_betas=None, workers=1):
    """Fit every grid point and keep the one with the smallest criterion.

    Returns the winning FederationConfig and the criterion table (one dict
    per grid point, in grid order).
    """
    m = len(datasets)
    points = [point for point in grid.points() if point[0] <= m]
    skipped = len(grid.points()) - len(points)
    if skipped:
        logger.warning(f"Skipping {skipped} grid points with K larger than M={m}")
    if not points:
        raise TuningError(f"No grid point has K <= M={m}")

    inits = {}
    for s in sorted({point[1] for point in points}):
        try:
            inits[s] = _local_inits(datasets, template, s, init_betas)
        except FedHuberError as e:
            raise TuningError(f"Initial local fits with s={s} failed: {e}") from e

    def configure(point):
        k, s, q, lam = point
        return replace(
            template,
            local=replace(template.local, s=s),
            central=replace(template.central, k=k, lam=lam),
            budget=SparsityBudget(s, q),
        )

    def evaluate(point):
        k, s, q, lam = point
        try:
            result = federated_fit(datasets, configure(point), init_betas=inits[s])
        except FedHuberError as e:
            raise TuningError(f"Grid point (K={k}, s={s}, q={q}, lambda={lam}) failed: {e}") from e
        value = selection_criterion(datasets, result.estimates, template.sigma, s, k, grid.c1, grid.c2)
        logger.debug(f"Grid point (K={k}, s={s}, q={q}, lambda={lam}): criterion {value:.6g}")
        return {'k': k, 's': s, 'q': q, 'lam': lam, 'criterion': float(value)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(evaluate, points))
    else:
        table = [evaluate(point) for point in points]

    best = min(range(len(table)), key=lambda i: (table[i]['criterion'], i))
    k, s, q, lam = points[best]
    logger.info(
        f"Selected K={k}, s={s}, q={q}, lambda={lam} "
        f"(criterion {table[best]['criterion']:.6g} over {len(table)} grid points)"
    )
    return configure(points[best]), table
