"""Supervised and sample-weighted ensemble losses with analytic gradients.

Both losses take the heads' *pre-activation* outputs ``z`` of shape
``(B, M, *event)``: logits for classification (softmax applied here) and
pre-sigmoid grids for regression. Gradients are returned with respect to
``z``. Classification uses cross-entropy, regression uses per-grid MSE.
"""

from dataclasses import dataclass

import numpy as np

from .probcore import InvalidInputError, log_softmax, sigmoid
from .uncertainty import CLASSIFICATION, REGRESSION


@dataclass
class LossReport:
    supervised: float
    unsupervised: float
    lambda_u: float = 1.0
    per_sample_terms: np.ndarray = None

    @property
    def total(self):
        return self.supervised + self.lambda_u * self.unsupervised


def _event_axes(z):
    return tuple(range(2, z.ndim))


def _per_head_terms(z, targets, mode):
    """Loss of every (sample, head) pair and its gradient w.r.t. ``z``.

    ``targets`` has shape ``(B, *event)`` and is shared by all heads of a sample.
    """
    B, M = z.shape[:2]
    t = targets[:, None]
    if mode == CLASSIFICATION:
        logp = log_softmax(z)
        terms = -(t * logp).sum(axis=-1)
        mass = targets.sum(axis=-1).reshape(B, 1, 1)
        grad = mass * np.exp(logp) - t
        return terms, grad
    if mode == REGRESSION:
        q = sigmoid(z)
        n = int(np.prod(z.shape[2:]))
        diff = q - t
        terms = (diff ** 2).reshape(B, M, -1).mean(axis=-1)
        grad = 2.0 * diff * q * (1.0 - q) / n
        return terms, grad
    raise InvalidInputError(f"unknown mode {mode!r}")


def _check(z, targets):
    z = np.asarray(z, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if z.ndim < 3:
        raise InvalidInputError(f"head outputs need shape (B, M, ...), got {z.shape}")
    if targets.shape != (z.shape[0],) + z.shape[2:]:
        raise InvalidInputError(f"target shape {targets.shape} does not fit head outputs {z.shape}")
    return z, targets


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def supervised_loss(z, targets, mode):
    """Mean over samples and heads of CE (or MSE) against ground truth.

    ``targets`` are one-hot rows (classification) or target heatmaps.
    Returns ``(loss, grad)``.
    """
    z, targets = _check(z, targets)
    B, M = z.shape[:2]
    terms, grad = _per_head_terms(z, targets, mode)
    return float(terms.mean()), grad / (B * M)


def ensemble_loss(z, pseudo, sample_weights, mode):
    """Sample-weighted loss of every head against the ensemble pseudo-label.

    The pseudo-label is a constant: no gradient reaches it. Masked-out samples
    add nothing but still count in the ``1 / B`` normaliser.
    Returns ``(loss, grad, per_sample_terms)``.
    """
    ens = getattr(pseudo, "ensemble", pseudo)
    mask = getattr(pseudo, "mask", None)
    z, targets = _check(z, np.array(ens, dtype=np.float64, copy=True))
    B, M = z.shape[:2]
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (B,):
        raise InvalidInputError(f"expected {B} sample weights, got shape {w.shape}")
    if mask is None:
        mask = np.ones(B, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (B,):
        raise InvalidInputError(f"expected {B} mask flags, got shape {mask.shape}")
    coef = w * mask
    terms, grad = _per_head_terms(z, targets, mode)
    per_sample = coef * terms.mean(axis=1)
    shape = (B, 1) + (1,) * (z.ndim - 2)
    grad = grad * coef.reshape(shape) / (B * M)
    return float(per_sample.sum() / B), grad, per_sample
