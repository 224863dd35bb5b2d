"""Numeric primitives shared by the rest of the package.

Everything here is a pure function on numpy arrays. Probability vectors are
1-D float arrays, heatmaps are ``(K, H, W)`` (or ``(H, W)``) float arrays.
"""

import numpy as np

EPS = 1e-12


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


def _as_float(x, name="input"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def softmax(logits, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    z = _as_float(logits, "logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = _as_float(logits, "logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cross_entropy(pred, target):
    """``-sum(target * log(pred))`` with ``pred`` clamped at ``EPS``."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidInputError(f"length mismatch: {p.shape} vs {t.shape}")
    if np.any(t < 0):
        raise InvalidInputError("target must be nonnegative")
    return float(-np.sum(t * np.log(np.clip(p, EPS, None))))


def mse(a, b):
    """Mean over all entries of the squared difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def argmax_class(p, axis=-1):
    """Index of the largest entry; ties go to the lowest index."""
    p = np.asarray(p)
    if p.size == 0:
        raise InvalidInputError("argmax of an empty vector")
    # np.argmax returns the first occurrence, which is the tie-break we want
    out = np.argmax(p, axis=axis)
    return int(out) if out.ndim == 0 else out


def heatmap_peak(h, k=0):
    """Return the ``(x, y)`` of the maximum of keypoint ``k``'s grid.

    ``h`` may be a single ``(H, W)`` grid or a ``(K, H, W)`` stack. Ties are
    resolved row-major, first occurrence wins.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 2:
        h = h[None]
    if h.ndim != 3:
        raise InvalidInputError(f"expected (K, H, W) heatmap, got shape {h.shape}")
    if not 0 <= k < h.shape[0]:
        raise InvalidInputError(f"keypoint index {k} out of range for K={h.shape[0]}")
    flat = int(np.argmax(h[k]))
    y, x = divmod(flat, h.shape[2])
    return float(x), float(y)


def heatmap_peaks(h):
    """Vectorised peaks for a ``(..., K, H, W)`` stack, returned as ``(..., K, 2)`` xy."""
    h = np.asarray(h)
    W = h.shape[-1]
    flat = np.argmax(h.reshape(*h.shape[:-2], -1), axis=-1)
    y, x = np.divmod(flat, W)
    return np.stack([x, y], axis=-1).astype(np.float64)
