"""Closed-form losses and their gradients with respect to predictions.

Every kernel works on row-major batches: ``prediction`` and ``target`` are
``(n, d)`` arrays and a kernel returns one loss per row. The public
single-vector functions wrap a 1-row batch, so per-sample and batched
results are computed by the same code.

Reductions per row:

==================  =====================================================
cross_entropy       ``-sum(t * log(p))``  (``p`` is a probability vector)
max_likelihood      categorical negative log-likelihood, same as above
kl                  ``sum(t * (log t - log p))`` with ``0 log 0 = 0``
hinge               ``mean(max(0, 1 - t * s))``, ``t`` in {-1, +1}
huber               ``mean`` of ``r**2 / 2`` or ``delta * (|r| - delta/2)``
l1                  ``mean(|r|)``
l2                  ``sum(r**2)``
mse                 ``mean(r**2)``
==================  =====================================================

Log arguments are clamped to ``[PROB_EPS, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-12
PROB_SUM_TOL = 1e-9

LOSS_NAMES = (
    "cross_entropy",
    "hinge",
    "huber",
    "kl",
    "l1",
    "l2",
    "max_likelihood",
    "mse",
)
DISTRIBUTION_LOSSES = frozenset({"cross_entropy", "kl", "max_likelihood"})


class LossError(ValueError):
    pass


class DimensionMismatch(LossError):
    pass


class InvalidProbability(LossError):
    pass


class InvalidTarget(LossError):
    pass


class NonPositiveDelta(LossError):
    pass


@dataclass(frozen=True)
class LossKind:
    """A loss tag; ``delta`` only matters for ``huber``."""

    name: str
    delta: float = 1.0

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {', '.join(LOSS_NAMES)}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise NonPositiveDelta(f"huber delta must be a positive finite number, got {self.delta!r}")

    @property
    def takes_distribution(self) -> bool:
        return self.name in DISTRIBUTION_LOSSES

    def __str__(self) -> str:
        return self.name if self.name != "huber" else f"huber(delta={self.delta!r})"


def as_loss_kind(kind: LossKind | str) -> LossKind:
    return kind if isinstance(kind, LossKind) else LossKind(str(kind))


def _validate(kind: LossKind, p: np.ndarray, t: np.ndarray) -> None:
    if p.shape != t.shape:
        raise DimensionMismatch(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise DimensionMismatch(f"need at least one sample with at least one entry, got shape {p.shape}")
    if kind.takes_distribution:
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > PROB_SUM_TOL):
            raise InvalidProbability("target rows must be probability vectors")
        if np.any(p < 0) or np.any(p > 1):
            raise InvalidProbability("prediction entries must lie in [0, 1]")
    elif kind.name == "hinge":
        if not np.all((t == 1.0) | (t == -1.0)):
            raise InvalidTarget("hinge targets must be -1 or +1")


def _rows(prediction, target) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(prediction, dtype=np.float64), np.asarray(target, dtype=np.float64)


def row_losses(kind: LossKind | str, prediction, target) -> np.ndarray:
    """Per-row loss for ``(n, d)`` batches."""
    kind = as_loss_kind(kind)
    p, t = _rows(prediction, target)
    _validate(kind, p, t)
    name = kind.name
    if name in ("cross_entropy", "max_likelihood"):
        return -(t * np.log(np.clip(p, PROB_EPS, 1.0))).sum(axis=1)
    if name == "kl":
        ratio = np.log(np.clip(t, PROB_EPS, 1.0)) - np.log(np.clip(p, PROB_EPS, 1.0))
        return np.where(t > 0, t * ratio, 0.0).sum(axis=1)
    if name == "hinge":
        return np.maximum(0.0, 1.0 - t * p).mean(axis=1)
    r = p - t
    if name == "huber":
        a = np.abs(r)
        d = kind.delta
        return np.where(a <= d, 0.5 * r * r, d * (a - 0.5 * d)).mean(axis=1)
    if name == "l1":
        return np.abs(r).mean(axis=1)
    if name == "l2":
        return (r * r).sum(axis=1)
    return (r * r).mean(axis=1)  # mse


def row_gradients(kind: LossKind | str, prediction, target) -> np.ndarray:
    """Per-row gradient of :func:`row_losses` w.r.t. the prediction.

    Subgradients: ``l1`` at a zero residual and ``hinge`` exactly on the
    margin both return 0.
    """
    kind = as_loss_kind(kind)
    p, t = _rows(prediction, target)
    _validate(kind, p, t)
    name = kind.name
    d = p.shape[1]
    if name in ("cross_entropy", "max_likelihood", "kl"):
        return -t / np.clip(p, PROB_EPS, 1.0)
    if name == "hinge":
        return np.where(1.0 - t * p > 0, -t, 0.0) / d
    r = p - t
    if name == "huber":
        return np.where(np.abs(r) <= kind.delta, r, kind.delta * np.sign(r)) / d
    if name == "l1":
        return np.sign(r) / d
    if name == "l2":
        return 2.0 * r
    return 2.0 * r / d  # mse


def _as_single_row(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {x.shape}")
    return x[None, :]


def eval_loss(kind: LossKind | str, prediction, target) -> float:
    """Loss of a single prediction vector against its target."""
    return float(row_losses(kind, _as_single_row(prediction), _as_single_row(target))[0])


def eval_loss_gradient(kind: LossKind | str, prediction, target) -> np.ndarray:
    """Gradient of :func:`eval_loss` with respect to ``prediction``."""
    return row_gradients(kind, _as_single_row(prediction), _as_single_row(target))[0]


def batch_mean_loss(kind: LossKind | str, predictions, targets) -> float:
    """Arithmetic mean of the per-row losses of an ``(n, d)`` batch."""
    p, t = _rows(predictions, targets)
    if p.ndim != 2 or p.shape[0] < 1:
        raise DimensionMismatch(f"batch must be a non-empty (n, d) matrix, got shape {p.shape}")
    return float(row_losses(kind, p, t).mean())


def batch_mean_gradient(kind: LossKind | str, predictions, targets) -> np.ndarray:
    """Gradient of :func:`batch_mean_loss` w.r.t. every prediction entry."""
    g = row_gradients(kind, predictions, targets)
    return g / g.shape[0]
