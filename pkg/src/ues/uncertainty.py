"""Mean-reference uncertainty over multi-head predictions.

A batch of head predictions is an array of shape ``(B, M, *event)`` where
``event`` is ``(C,)`` for class probabilities or ``(K, H, W)`` for heatmaps.
The per-sample mean over heads is the reference that both the sample and the
head uncertainties are measured against.
"""

from dataclasses import dataclass, field

import numpy as np

from .probcore import InvalidInputError, softmax

CLASSIFICATION = "classification"
REGRESSION = "regression"
MODES = (CLASSIFICATION, REGRESSION)


class ModeMismatchError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HeadBatch:
    predictions: np.ndarray
    mode: str

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=np.float64)
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if p.ndim < 3:
            raise InvalidInputError(f"predictions need shape (B, M, ...), got {p.shape}")
        if p.shape[1] < 2:
            raise InvalidInputError("M >= 2 required")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("predictions contain non-finite entries")
        object.__setattr__(self, "predictions", p)

    @property
    def n_samples(self):
        return self.predictions.shape[0]

    @property
    def n_heads(self):
        return self.predictions.shape[1]

    def _require(self, mode):
        if self.mode != mode:
            raise ModeMismatchError(f"operation needs {mode} batch, got {self.mode}")


def _event_axes(p):
    return tuple(range(2, p.ndim))


def _reference(p):
    # mean taken relative to head 0, so heads that agree exactly give a
    # reference equal to them and a dispersion of exactly zero
    anchor = p[:, :1]
    return anchor + (p - anchor).mean(axis=1, keepdims=True)


def mean_reference(batch):
    """Per-sample average of the head predictions, shape ``(B, *event)``."""
    return _reference(batch.predictions)[:, 0]


def _head_mse(batch):
    # (B, M): mse of every head output against the sample's mean reference
    p = batch.predictions
    return ((p - _reference(p)) ** 2).mean(axis=_event_axes(p))


def sample_uncertainty_regression(batch):
    batch._require(REGRESSION)
    return _head_mse(batch).mean(axis=1)


def sample_uncertainty_classification(batch):
    """Average over classes of the population variance across heads."""
    batch._require(CLASSIFICATION)
    p = batch.predictions
    return ((p - _reference(p)) ** 2).mean(axis=1).mean(axis=-1)


def sample_uncertainty(batch):
    if batch.mode == REGRESSION:
        return sample_uncertainty_regression(batch)
    return sample_uncertainty_classification(batch)


def long_tailed_weights(uncertainties):
    """Map uncertainties to weights in ``[0.5, 1]`` via ``1 / (u / max(u) + 1)``.

    The normaliser is the batch maximum uncertainty. A batch whose maximum is
    below ``1e-12`` gets weight 1 everywhere.
    """
    u = np.asarray(uncertainties, dtype=np.float64)
    if np.any(u < 0):
        raise InvalidInputError("uncertainties must be nonnegative")
    if u.size == 0:
        return u.copy()
    top = float(u.max())
    if top < 1e-12:
        return np.ones_like(u)
    return 1.0 / (u / top + 1.0)


def head_uncertainty_regression(batch):
    batch._require(REGRESSION)
    return _head_mse(batch).mean(axis=0)


def head_uncertainty_classification(batch):
    """Fraction of samples where a head's argmax differs from the reference argmax."""
    batch._require(CLASSIFICATION)
    p = batch.predictions
    head_cls = np.argmax(p, axis=-1)
    ref_cls = np.argmax(_reference(p)[:, 0], axis=-1)
    return (head_cls != ref_cls[:, None]).mean(axis=0)


def head_uncertainty(batch):
    if batch.mode == REGRESSION:
        return head_uncertainty_regression(batch)
    return head_uncertainty_classification(batch)


def head_weights(u, mode):
    """Softmax head weights; ``-u`` for regression and ``M - u`` for classification.

    The two forms give identical results since softmax ignores a constant
    shift; both are kept so each mode evaluates its own published formula.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size < 2:
        raise InvalidInputError("M >= 2 required")
    if mode == REGRESSION:
        return softmax(-u)
    if mode == CLASSIFICATION:
        return softmax(u.size - u)
    raise InvalidInputError(f"unknown mode {mode!r}")


@dataclass
class HeadWeightState:
    """EMA-smoothed head weights; ``ema_weights`` starts uniform."""

    n_heads: int
    decay: float = 0.7
    raw_uncertainty: np.ndarray = None
    instant_weights: np.ndarray = None
    ema_weights: np.ndarray = None
    updates: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigError(f"EMA decay must lie in (0, 1), got {self.decay}")
        if self.n_heads < 2:
            raise InvalidInputError("M >= 2 required")
        uniform = np.full(self.n_heads, 1.0 / self.n_heads)
        if self.ema_weights is None:
            self.ema_weights = uniform.copy()
        if self.instant_weights is None:
            self.instant_weights = uniform.copy()
        if self.raw_uncertainty is None:
            self.raw_uncertainty = np.zeros(self.n_heads)

    def snapshot(self):
        return HeadWeightState(
            self.n_heads,
            self.decay,
            self.raw_uncertainty.copy(),
            self.instant_weights.copy(),
            self.ema_weights.copy(),
            self.updates,
        )

    def to_dict(self):
        return {
            "n_heads": self.n_heads,
            "decay": self.decay,
            "raw_uncertainty": self.raw_uncertainty.tolist(),
            "instant_weights": self.instant_weights.tolist(),
            "ema_weights": self.ema_weights.tolist(),
            "updates": self.updates,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["n_heads"]),
            float(d["decay"]),
            np.asarray(d["raw_uncertainty"], dtype=np.float64),
            np.asarray(d["instant_weights"], dtype=np.float64),
            np.asarray(d["ema_weights"], dtype=np.float64),
            int(d.get("updates", 0)),
        )


def ema_update(state, instant, raw_uncertainty=None):
    """Return a new state with ``ema <- decay * ema + (1 - decay) * instant``, renormalised."""
    w = np.asarray(instant, dtype=np.float64)
    if w.shape != (state.n_heads,):
        raise InvalidInputError(f"expected {state.n_heads} weights, got shape {w.shape}")
    if abs(w.sum() - 1.0) > 1e-6:
        raise InvalidInputError("instant head weights must sum to 1")
    if not 0.0 < state.decay < 1.0:
        raise ConfigError(f"EMA decay must lie in (0, 1), got {state.decay}")
    ema = state.decay * state.ema_weights + (1.0 - state.decay) * w
    ema = ema / ema.sum()
    raw = state.raw_uncertainty if raw_uncertainty is None else np.asarray(raw_uncertainty, dtype=np.float64)
    return HeadWeightState(state.n_heads, state.decay, raw.copy(), w.copy(), ema, state.updates + 1)


@dataclass
class SampleUtility:
    uncertainties: np.ndarray
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.uncertainties = np.asarray(self.uncertainties, dtype=np.float64)
        self.weights = long_tailed_weights(self.uncertainties)


def sample_utility(batch):
    return SampleUtility(sample_uncertainty(batch))
