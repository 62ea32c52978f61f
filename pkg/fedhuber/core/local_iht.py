"""Per-task sparse Huber regression by iterative hard thresholding"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, DomainError, ParameterError, ShapeError
from .huber import huber_gradient, huber_objective, l2_gradient, l2_objective
from .projection import hard_threshold

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
LOSSES = ('huber', 'squared')


@dataclass(frozen=True)
class LocalFitConfig:
    """Step size, Huber threshold, sparsity and stopping rule of a local fit.

    ``tol = 0`` disables early stopping so exactly ``t_max`` steps run.
    """

    eta: float = 0.01
    sigma: float = 3.0
    s: int = 3
    t_max: int = 1000
    tol: float = 1e-8
    loss: str = 'huber'

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise ParameterError(f"Step size eta must be positive, got {self.eta}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if self.s < 1:
            raise ParameterError(f"s must be at least 1, got {self.s}")
        if self.t_max < 1:
            raise ParameterError(f"t_max must be at least 1, got {self.t_max}")
        if self.tol < 0:
            raise ParameterError(f"tol must be nonnegative, got {self.tol}")
        if self.loss not in LOSSES:
            raise ParameterError(f"Unknown loss '{self.loss}', expected one of {LOSSES}")


def loss_gradient(d, beta, loss, sigma):
    if loss == 'squared':
        return l2_gradient(d, beta)
    return huber_gradient(d, beta, sigma)


def loss_objective(d, beta, loss, sigma):
    if loss == 'squared':
        return l2_objective(d, beta)
    return huber_objective(d, beta, sigma)


def check_divergence(d, beta, loss, sigma, eta):
    """Raise DivergenceError if beta is non-finite or the objective exploded"""
    if not np.all(np.isfinite(beta)):
        raise DivergenceError(
            f"Task {d.task_id}: non-finite coefficients with step size eta={eta}", eta=eta
        )
    try:
        value = loss_objective(d, beta, loss, sigma)
    except DomainError:
        value = np.inf
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"Task {d.task_id}: objective {value:.3g} exceeds {DIVERGENCE_LIMIT:.0e} "
            f"with step size eta={eta}",
            eta=eta,
        )
    return value


def _initial(d, cfg, init):
    if init is None:
        return np.zeros(d.p)
    beta = np.asarray(init, dtype=np.float64).copy()
    if beta.shape != (d.p,):
        raise ShapeError(f"Task {d.task_id}: init has shape {beta.shape}, expected ({d.p},)")
    if np.count_nonzero(beta) > cfg.s:
        raise ParameterError(
            f"Task {d.task_id}: init has {np.count_nonzero(beta)} nonzeros, budget is s={cfg.s}"
        )
    return beta


def local_iht_path(d, cfg, init=None):
    """Yield the iterates beta^(1), beta^(2), ... of the local IHT recursion"""
    if cfg.s > d.p:
        raise ParameterError(f"Task {d.task_id}: s={cfg.s} exceeds p={d.p}")
    beta = _initial(d, cfg, init)
    for t in range(1, cfg.t_max + 1):
        grad = loss_gradient(d, beta, cfg.loss, cfg.sigma)
        candidate = beta - cfg.eta * grad
        if not np.all(np.isfinite(candidate)):
            raise DivergenceError(
                f"Task {d.task_id}: non-finite gradient step at iteration {t} "
                f"with step size eta={cfg.eta}",
                eta=cfg.eta,
            )
        new = hard_threshold(candidate, cfg.s)
        check_divergence(d, new, cfg.loss, cfg.sigma, cfg.eta)
        step = float(np.linalg.norm(new - beta))
        beta = new
        yield beta
        if step < cfg.tol:
            logger.debug(f"Task {d.task_id}: local IHT stopped at iteration {t} (step {step:.2e})")
            return


def local_iht_fit(d, cfg, init=None):
    """Run local IHT and return the final iterate (at most s nonzeros)"""
    beta = _initial(d, cfg, init)
    for beta in local_iht_path(d, cfg, init):
        pass
    return beta


def soft_threshold(v, c):
    return np.sign(v) * np.maximum(np.abs(v) - c, 0.0)


def l1_huber_init(d, sigma, penalty, iters, eta=None):
    """Approximate minimiser of H_sigma(beta) + penalty * ||beta||_1 by ISTA.

    Used only as an optional initialiser for local IHT. The default step is
    1/L with L = ||X||_2^2 / n.
    """
    if penalty < 0:
        raise ParameterError(f"penalty must be nonnegative, got {penalty}")
    if iters < 1:
        raise ParameterError(f"iters must be at least 1, got {iters}")
    if eta is None:
        eta = d.n / max(np.linalg.norm(d.x, 2) ** 2, np.finfo(float).tiny)
    beta = np.zeros(d.p)
    for _ in range(iters):
        grad = huber_gradient(d, beta, sigma)
        beta = soft_threshold(beta - eta * grad, eta * penalty)
        if not np.all(np.isfinite(beta)):
            raise DivergenceError(
                f"Task {d.task_id}: l1-Huber initialiser diverged with step size eta={eta}",
                eta=eta,
            )
    check_divergence(d, beta, 'huber', sigma, eta)
    return beta
