"""Sparsity projections: per-task hard thresholding and group-aggregated thresholding.

Ties in magnitude are broken toward the smaller coordinate index.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError


@dataclass(frozen=True)
class SparsityBudget:
    """Per-task sparsity ``s`` and group-support sparsity ``q``"""

    s: int
    q: int = None

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, 'q', self.s)
        if self.s < 1:
            raise ParameterError(f"s must be at least 1, got {self.s}")
        if self.q < self.s:
            raise ParameterError(f"q must be at least s, got s={self.s}, q={self.q}")

    def validate(self, p):
        if self.q > p:
            raise ParameterError(f"Sparsity budget q={self.q} exceeds dimension p={p}")
        return self


def top_support(scores, k):
    """Indices of the k largest scores, ties toward the smaller index, in index order"""
    order = np.argsort(-np.asarray(scores), kind='stable')
    return np.sort(order[:k])


def hard_threshold(alpha, s):
    """Keep the s largest-magnitude entries of alpha, zero the rest"""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1:
        raise ShapeError(f"hard_threshold expects a vector, got shape {alpha.shape}")
    p = alpha.shape[0]
    if s < 1 or s > p:
        raise ParameterError(f"Sparsity s={s} outside [1, {p}]")
    if not np.all(np.isfinite(alpha)):
        raise DomainError("hard_threshold received non-finite entries")
    keep = top_support(np.abs(alpha), s)
    out = np.zeros_like(alpha)
    out[keep] = alpha[keep]
    return out


def group_project(alphas, q):
    """Common top-q support for a group, ranked by |sum over members|.

    ``alphas`` is a sequence of vectors (or an array with one row per task);
    returns an array of the same shape.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim == 1:
        alphas = alphas.reshape(1, -1)
    if alphas.ndim != 2 or alphas.shape[0] == 0:
        raise ParameterError("group_project needs a non-empty group of vectors")
    p = alphas.shape[1]
    if q < 1 or q > p:
        raise ParameterError(f"Group sparsity q={q} outside [1, {p}]")
    if not np.all(np.isfinite(alphas)):
        raise DomainError("group_project received non-finite entries")
    keep = top_support(np.abs(alphas.sum(axis=0)), q)
    out = np.zeros_like(alphas)
    out[:, keep] = alphas[:, keep]
    return out
