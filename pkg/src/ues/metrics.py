"""Evaluation metrics and uncertainty diagnostics."""

import numpy as np

from .probcore import InvalidInputError, heatmap_peaks
from .uncertainty import CLASSIFICATION, ModeMismatchError

PCK_THRESHOLDS = (0.5, 0.3, 0.2, 0.1)


def mean_ensemble(net, x, weights=None):
    """Ensemble prediction of ``net`` on ``x``: uniform mean unless ``weights`` given."""
    p = net.forward(x).predictions
    if weights is None:
        return p.mean(axis=1)
    w = np.asarray(weights, dtype=np.float64)
    return np.tensordot(w, p, axes=([0], [1]))


def error_rate(net, x, y, weights=None):
    if net.spec.mode != CLASSIFICATION:
        raise ModeMismatchError("error_rate needs a classification model")
    pred = np.argmax(mean_ensemble(net, x, weights), axis=-1)
    return float(np.mean(pred != np.asarray(y)))


def predict_keypoints(net, x, weights=None):
    return heatmap_peaks(mean_ensemble(net, x, weights))


def keypoint_distances(preds, gts):
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise InvalidInputError(f"count mismatch: {preds.shape} vs {gts.shape}")
    return np.sqrt(((preds - gts) ** 2).sum(axis=-1))


def mse_metric(preds, gts):
    """Mean Euclidean distance between predicted and true keypoints.

    Named after the pose-estimation convention, but it is a plain distance,
    not a squared one.
    """
    return float(keypoint_distances(preds, gts).mean())


def pck(preds, gts, norm, threshold):
    """Fraction of keypoints whose distance divided by ``norm`` is at most ``threshold``."""
    if norm <= 0:
        raise InvalidInputError("normalisation distance must be positive")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError("threshold must lie in [0, 1]")
    d = keypoint_distances(preds, gts)
    return float(np.mean(d / norm <= threshold))


def pck_norm(image_size):
    """Normalisation distance used for the synthetic task: a quarter of the diagonal."""
    return float(np.hypot(image_size, image_size) / 4.0)


def uncertainty_accuracy_correlation(uncertainties, correct):
    """Pearson correlation of uncertainty and 0/1 correctness, ``None`` if undefined."""
    u = np.asarray(uncertainties, dtype=np.float64)
    c = np.asarray(correct, dtype=np.float64)
    if u.shape != c.shape or u.size < 2:
        raise InvalidInputError("need two equal-length sequences of at least two samples")
    du, dc = u - u.mean(), c - c.mean()
    su, sc = np.sqrt((du ** 2).sum()), np.sqrt((dc ** 2).sum())
    if su == 0.0 or sc == 0.0:
        return None
    return float(np.clip((du * dc).sum() / (su * sc), -1.0, 1.0))


def uncertainty_histogram(uncertainties, bins=10, upper=None):
    """Equal-width bin counts over ``[0, upper]`` (``upper`` defaults to the max).

    Values above ``upper`` land in the last bin so counts always sum to the
    number of samples.
    """
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    u = np.asarray(uncertainties, dtype=np.float64)
    top = float(u.max()) if upper is None and u.size else float(upper or 0.0)
    if top <= 0.0:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = u.size
        return counts
    idx = np.floor(u / top * bins).astype(np.int64)
    return np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
