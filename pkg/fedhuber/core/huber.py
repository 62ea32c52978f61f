"""Huber loss, per-task empirical objective and gradients.

All functions are pure and operate on float64 numpy arrays, so they can be
called from several worker threads at once.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError, ShapeError


@dataclass(frozen=True)
class TaskDataset:
    """One client's design matrix ``x`` (n x p) and responses ``y`` (n)"""

    x: np.ndarray
    y: np.ndarray
    task_id: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ShapeError(f"Task {self.task_id}: x must be 2-D, got {x.ndim} dimensions")
        if y.ndim != 1:
            raise ShapeError(f"Task {self.task_id}: y must be 1-D, got {y.ndim} dimensions")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeError(f"Task {self.task_id}: empty design matrix {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise ShapeError(
                f"Task {self.task_id}: y has {y.shape[0]} entries but x has {x.shape[0]} rows"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError(f"Task {self.task_id}: non-finite entries in data")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'y', y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def residuals(self, beta):
        beta = _check_beta(self, beta)
        return self.y - self.x @ beta


@dataclass(frozen=True)
class HuberParams:
    sigma: float = field(default=3.0)

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ParameterError(f"sigma must be positive and finite, got {self.sigma}")


def _check_sigma(sigma):
    if not np.isfinite(sigma) or sigma <= 0:
        raise ParameterError(f"sigma must be positive and finite, got {sigma}")


def _check_beta(d, beta):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (d.p,):
        raise ShapeError(f"Task {d.task_id}: beta has shape {beta.shape}, expected ({d.p},)")
    if not np.all(np.isfinite(beta)):
        raise DomainError(f"Task {d.task_id}: non-finite coefficients")
    return beta


def huber_loss(r, sigma):
    """H_sigma(r): r^2/2 inside [-sigma, sigma], sigma|r| - sigma^2/2 outside.

    Accepts a scalar or an array of residuals.
    """
    _check_sigma(sigma)
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise DomainError("huber_loss received a non-finite residual")
    a = np.abs(r)
    out = np.where(a <= sigma, 0.5 * r * r, sigma * a - 0.5 * sigma * sigma)
    return float(out) if out.ndim == 0 else out


def huber_psi(r, sigma):
    """Derivative of the Huber loss, clamp(r, -sigma, sigma)"""
    _check_sigma(sigma)
    return np.clip(r, -sigma, sigma)


def huber_objective(d, beta, sigma):
    """(1/n) sum_i H_sigma(y_i - x_i' beta)"""
    r = d.residuals(beta)
    return float(np.mean(huber_loss(r, sigma)))


def huber_gradient(d, beta, sigma):
    """-(1/n) sum_i psi_sigma(y_i - x_i' beta) x_i"""
    r = d.residuals(beta)
    return -(d.x.T @ huber_psi(r, sigma)) / d.n


def l2_objective(d, beta):
    r = d.residuals(beta)
    return float(0.5 * np.mean(r * r))


def l2_gradient(d, beta):
    r = d.residuals(beta)
    return -(d.x.T @ r) / d.n
