"""Head-weighted, thresholded ensemble pseudo-labels."""

from dataclasses import dataclass

import numpy as np

from .probcore import InvalidInputError, heatmap_peaks
from .uncertainty import CLASSIFICATION, REGRESSION


class MaskedSampleError(LookupError):
    pass


@dataclass(frozen=True)
class PseudoLabelConfig:
    """Threshold settings.

    ``tau`` is compared against the largest entry of each *weighted* head
    output ``w_m * p_m``. Because head weights sum to one, those entries are
    of order ``1 / M``; pick ``tau`` on that scale.
    """

    tau: float = 0.95
    warmup_epochs: int = 5
    normalize_ensemble: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidInputError(f"tau must lie in [0, 1], got {self.tau}")
        if self.warmup_epochs < 0:
            raise InvalidInputError("warmup_epochs must be >= 0")

    def effective_tau(self, epoch):
        return 0.0 if epoch < self.warmup_epochs else self.tau


@dataclass
class PseudoLabelBatch:
    ensemble: np.ndarray  # (B, *event)
    mask: np.ndarray  # (B,) bool
    head_passed: np.ndarray  # (B, M) bool
    mode: str

    def hard_label(self, i):
        if not self.mask[i]:
            raise MaskedSampleError(f"sample {i} is masked out")
        return hard_label_of(self.ensemble[i], self.mode)

    def hard_labels(self):
        """Hard labels for all samples; entries for masked samples are meaningless."""
        if self.mode == CLASSIFICATION:
            return np.argmax(self.ensemble, axis=-1)
        return heatmap_peaks(self.ensemble)


def hard_label_of(p, mode):
    """Argmax class or per-keypoint ``(x, y)`` peaks of one ensemble prediction."""
    p = np.asarray(p)
    if mode == CLASSIFICATION:
        return int(np.argmax(p))
    peaks = heatmap_peaks(p if p.ndim == 3 else p[None])
    return peaks


def ensemble_prediction(predictions, head_weights, cfg, epoch, mode=CLASSIFICATION):
    """Weighted ensemble ``(1/M) * sum_m [max(w_m p_m) > tau] * w_m * p_m``.

    ``predictions`` has shape ``(B, M, *event)``. With ``normalize_ensemble``
    the kept samples are divided by the passing weight mass ``sum_m w_m / M``,
    which makes class vectors sum to one and keeps heatmap peak heights.
    """
    p = np.asarray(getattr(predictions, "predictions", predictions), dtype=np.float64)
    mode = getattr(predictions, "mode", mode)
    w = np.asarray(head_weights, dtype=np.float64)
    B, M = p.shape[:2]
    if w.shape != (M,):
        raise InvalidInputError(f"expected {M} head weights, got shape {w.shape}")
    if abs(w.sum() - 1.0) > 1e-6:
        raise InvalidInputError("head weights must sum to 1")
    tau = cfg.effective_tau(epoch)
    event = (1,) * (p.ndim - 2)
    weighted = p * w.reshape(1, M, *event)
    peak = weighted.reshape(B, M, -1).max(axis=-1)
    passed = peak > tau
    ens = (weighted * passed.reshape(B, M, *event)).sum(axis=1) / M
    mask = passed.any(axis=1)
    if cfg.normalize_ensemble:
        mass = (passed * w).sum(axis=1) / M
        scale = np.where(mask, mass, 1.0)
        ens = ens / scale.reshape(B, *event)
    return PseudoLabelBatch(ens, mask, passed, mode)
