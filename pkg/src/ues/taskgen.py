"""Synthetic semi-supervised tasks, augmentations and batching.

Three tasks are available: ``moons`` and ``blobs`` (2-D points with class
labels) and ``keypoints`` (32x32 grayscale images with ``K`` rendered blobs
whose centres are the targets). Everything is determined by the seed.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from sklearn.datasets import make_blobs, make_moons

from .probcore import InvalidInputError

TASKS = ("moons", "blobs", "keypoints")

WEAK = {"jitter": 0.05, "rotation": 5.0, "scale": (0.95, 1.05)}
STRONG = {"jitter": 0.25, "rotation": 30.0, "scale": (0.75, 1.25)}


@dataclass(frozen=True)
class DatasetSpec:
    task: str = "moons"
    n_total: int = 204
    n_labeled: int = 4
    mu: int = 7
    noise: float = 0.1
    seed: int = 0
    n_test: int = 1000
    image_size: int = 32
    n_keypoints: int = 1
    n_classes: int = 2

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}; choose from {TASKS}")
        if not 0 <= self.n_labeled <= self.n_total:
            raise InvalidInputError("n_labeled must lie in [0, n_total]")
        if self.mu < 1 or int(self.mu) != self.mu:
            raise InvalidInputError("mu must be a positive integer")
        if self.noise < 0:
            raise InvalidInputError("noise must be >= 0")
        if self.task == "keypoints" and not 1 <= self.n_keypoints <= 3:
            raise InvalidInputError("keypoint task supports K in 1..3")
        if self.task == "moons" and self.n_classes != 2:
            raise InvalidInputError("moons has exactly two classes")

    @property
    def mode(self):
        return "regression" if self.task == "keypoints" else "classification"

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    spec: DatasetSpec
    x: np.ndarray  # (N, 2) points or (N, H, W) images
    y: np.ndarray  # (N,) class ids or (N, K, 2) xy keypoints
    is_labeled: np.ndarray  # (N,) bool
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def labeled_idx(self):
        return np.flatnonzero(self.is_labeled)

    @property
    def unlabeled_idx(self):
        return np.flatnonzero(~self.is_labeled)


def render_heatmaps(points, size, sigma=1.5):
    """Unit-peak Gaussians at ``points`` (``(..., K, 2)`` xy) on ``size`` grids."""
    h, w = size if isinstance(size, tuple) else (size, size)
    pts = np.asarray(points, dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    dx = xx - pts[..., 0, None, None]
    dy = yy - pts[..., 1, None, None]
    return np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))


def _blob_sigmas(k):
    return 1.5 + 0.75 * np.arange(k)


def _render_images(rng, n, size, k, noise):
    margin = 4.0
    pts = rng.uniform(margin, size - 1 - margin, size=(n, k, 2))
    imgs = np.zeros((n, size, size))
    for j, s in enumerate(_blob_sigmas(k)):
        imgs += render_heatmaps(pts[:, j], size, sigma=s)
    imgs += rng.normal(0.0, noise, size=imgs.shape)
    return imgs, pts


def _points(task, rng, n, spec):
    seed = int(rng.integers(2**31 - 1))
    if task == "moons":
        return make_moons(n_samples=n, noise=spec.noise, random_state=seed)
    centers = np.array([[np.cos(a), np.sin(a)] for a in 2 * np.pi * np.arange(spec.n_classes) / spec.n_classes]) * 3
    return make_blobs(n_samples=n, centers=centers, cluster_std=spec.noise, random_state=seed)


def _choose_labeled(rng, y, n_labeled, stratify):
    n = len(y)
    if not stratify:
        return rng.permutation(n)[:n_labeled]
    # round-robin over classes so small labeled sets stay balanced
    pools = [rng.permutation(np.flatnonzero(y == c)).tolist() for c in np.unique(y)]
    chosen = []
    while len(chosen) < n_labeled:
        for pool in pools:
            if pool and len(chosen) < n_labeled:
                chosen.append(pool.pop(0))
    return np.array(sorted(chosen), dtype=np.int64)


def generate(spec):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5E5]))
    if spec.task == "keypoints":
        x, y = _render_images(rng, spec.n_total, spec.image_size, spec.n_keypoints, spec.noise)
        tx, ty = _render_images(rng, spec.n_test, spec.image_size, spec.n_keypoints, spec.noise)
        chosen = _choose_labeled(rng, np.zeros(spec.n_total), spec.n_labeled, stratify=False)
    else:
        x, y = _points(spec.task, rng, spec.n_total, spec)
        tx, ty = _points(spec.task, rng, spec.n_test, spec)
        chosen = _choose_labeled(rng, y, spec.n_labeled, stratify=True)
        y, ty = y.astype(np.int64), ty.astype(np.int64)
    flags = np.zeros(spec.n_total, dtype=bool)
    flags[chosen] = True
    return Dataset(spec, x.astype(np.float64), y, flags, tx.astype(np.float64), ty)


# -- augmentation ----------------------------------------------------------

def _affine_params(rng, n, strength):
    angle = np.deg2rad(rng.uniform(-strength["rotation"], strength["rotation"], size=n))
    scale = rng.uniform(*strength["scale"], size=n)
    return np.asarray(angle, dtype=np.float64).reshape(n), np.asarray(scale, dtype=np.float64).reshape(n)


def affine_matrix(angle, scale):
    """2x2 xy matrix: rotate by ``angle`` (radians) then scale about the centre."""
    c, s = np.cos(angle), np.sin(angle)
    return scale * np.array([[c, -s], [s, c]])


def transform_points(points, angle, scale, size):
    centre = (size - 1) / 2.0
    A = affine_matrix(angle, scale)
    return (np.asarray(points) - centre) @ A.T + centre


def warp_image(img, A):
    """Resample ``img`` so that pixel ``p`` moves to ``A (p - c) + c`` (xy, centre ``c``)."""
    img = np.asarray(img, dtype=np.float64)
    centre = (img.shape[-1] - 1) / 2.0
    inv = np.linalg.inv(A)
    # scipy works in (row, col); swap the xy axes of the inverse map
    inv_rc = inv[::-1, ::-1]
    offset = centre - inv_rc @ np.array([centre, centre])
    if img.ndim == 3:
        return np.stack([warp_image(g, A) for g in img])
    return ndimage.affine_transform(img, inv_rc, offset=offset, order=1, mode="constant", cval=0.0)


def transform_image(img, angle, scale):
    return warp_image(img, affine_matrix(angle, scale))


def augment_points(x, rng, strength):
    x = np.asarray(x, dtype=np.float64)
    return x + rng.normal(0.0, strength["jitter"], size=x.shape)


def augment_images(imgs, rng, strength, keypoints=None, return_matrices=False):
    """Random rotation/scale of each image; keypoints (if given) follow the same map."""
    imgs = np.asarray(imgs, dtype=np.float64)
    n = imgs.shape[0]
    angle, scale = _affine_params(rng, n, strength)
    out = np.empty_like(imgs)
    mats = np.empty((n, 2, 2))
    for i in range(n):
        mats[i] = affine_matrix(angle[i], scale[i])
        if angle[i] == 0.0 and scale[i] == 1.0:
            out[i] = imgs[i]
        else:
            out[i] = warp_image(imgs[i], mats[i])
    result = [out]
    if keypoints is not None:
        result.append(np.stack([transform_points(keypoints[i], angle[i], scale[i], imgs.shape[1]) for i in range(n)]))
    if return_matrices:
        result.append(mats)
    return result[0] if len(result) == 1 else tuple(result)


def _augment(x, rng, strength, task):
    if task == "keypoints":
        return augment_images(x, rng, strength)
    return augment_points(x, rng, strength)


def weak_augment(x, rng, task="moons"):
    return _augment(x, rng, WEAK, task)


def strong_augment(x, rng, task="moons"):
    return _augment(x, rng, STRONG, task)


# -- batching --------------------------------------------------------------

class BatchStream:
    """Labeled/unlabeled index batches.

    One epoch is one shuffled pass over the labeled set in chunks of
    ``batch_size``. Each step also draws exactly ``mu * batch_size`` unlabeled
    indices from a continuing stream that reshuffles whenever it runs dry.
    """

    def __init__(self, dataset, batch_size, mu, seed):
        if batch_size < 1:
            raise InvalidInputError("batch size must be >= 1")
        self.labeled = dataset.labeled_idx
        self.unlabeled = dataset.unlabeled_idx
        if len(self.labeled) == 0:
            raise InvalidInputError("insufficient data: no labeled samples")
        self.batch_size = batch_size
        self.unlabeled_batch = int(mu) * batch_size
        if len(self.unlabeled) and len(self.unlabeled) < self.unlabeled_batch:
            raise InvalidInputError(
                f"insufficient data: {len(self.unlabeled)} unlabeled samples < batch of {self.unlabeled_batch}"
            )
        lab_seq, unl_seq = np.random.SeedSequence([seed, 0xBA7C]).spawn(2)
        self.rng = np.random.default_rng(lab_seq)
        self.rng_unlabeled = np.random.default_rng(unl_seq)
        self._queue = np.empty(0, dtype=np.int64)

    def _take_unlabeled(self):
        if len(self.unlabeled) == 0:
            return np.empty(0, dtype=np.int64)
        while len(self._queue) < self.unlabeled_batch:
            self._queue = np.concatenate([self._queue, self.rng_unlabeled.permutation(self.unlabeled)])
        out, self._queue = self._queue[: self.unlabeled_batch], self._queue[self.unlabeled_batch:]
        return out

    def epoch(self):
        order = self.rng.permutation(self.labeled)
        for start in range(0, len(order), self.batch_size):
            yield order[start:start + self.batch_size], self._take_unlabeled()


def batch_iterator(dataset, batch_size, mu, seed, epochs=1):
    stream = BatchStream(dataset, batch_size, mu, seed)
    for _ in range(epochs):
        yield from stream.epoch()


# -- export / import -------------------------------------------------------

def export_dataset(dataset, path):
    """Write points as CSV, or images as a raw float64 file plus JSON sidecar."""
    path = os.fspath(path)
    if dataset.spec.task == "keypoints":
        with open(path + ".bin", "wb") as fh:
            fh.write(np.ascontiguousarray(dataset.x, dtype="<f8").tobytes())
        meta = {
            "shape": list(dataset.x.shape),
            "dtype": "f64",
            "byteorder": "little",
            "order": "row-major",
            "keypoints": dataset.y.tolist(),
            "is_labeled": dataset.is_labeled.tolist(),
            "spec": dataset.spec.to_dict(),
        }
        with open(path + ".json", "w") as fh:
            json.dump(meta, fh)
        return [path + ".bin", path + ".json"]
    with open(path + ".csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x0", "x1", "label", "is_labeled"])
        for (a, b), lab, flag in zip(dataset.x, dataset.y, dataset.is_labeled):
            wr.writerow([repr(float(a)), repr(float(b)), int(lab), int(flag)])
    return [path + ".csv"]


def import_points(path):
    """Read a points CSV back as ``(x, y, is_labeled)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([[float(r["x0"]), float(r["x1"])] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    flags = np.array([r["is_labeled"] == "1" for r in rows])
    return x, y, flags


def import_images(path):
    """Read ``path.bin``/``path.json`` back as ``(images, keypoints, is_labeled)``."""
    with open(path + ".json") as fh:
        meta = json.load(fh)
    if meta.get("dtype") != "f64" or meta.get("order") != "row-major":
        raise InvalidInputError("unsupported image file layout")
    with open(path + ".bin", "rb") as fh:
        raw = fh.read()
    imgs = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(meta["shape"])
    return imgs, np.asarray(meta["keypoints"]), np.asarray(meta["is_labeled"], dtype=bool)
