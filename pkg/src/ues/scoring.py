"""NDJSON batch scoring for head predictions produced by any model.

Each input line is a request with an ``id``, a ``mode`` and ``heads``: one
array per prediction head (class probabilities, or a flattened heatmap with
its ``shape``). Requests are grouped into batches that end at a blank line or
after ``batch_size`` requests. For every batch the scorer writes one response
per request, in input order, followed by a summary line with head
uncertainties and head weights. Head-weight EMA state carries across batches.
"""

import json
import math

import numpy as np

from .pseudolabel import PseudoLabelConfig, ensemble_prediction, hard_label_of
from .uncertainty import (
    MODES,
    REGRESSION,
    HeadBatch,
    HeadWeightState,
    ema_update,
    head_uncertainty,
    head_weights,
    long_tailed_weights,
    sample_uncertainty,
)


class RequestError(ValueError):
    """A single request line that cannot be scored."""


def dumps(obj):
    """Compact JSON with shortest round-trip floats."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _finite_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_request(line, default_tau):
    """Decode one line into ``(id, mode, array of shape (M, *event), tau)``."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RequestError(f"malformed JSON: {exc.msg}", None) from None
    if not isinstance(obj, dict):
        raise RequestError("request must be a JSON object", None)
    rid = obj.get("id")
    if not isinstance(rid, str):
        raise RequestError("id must be a string", rid if isinstance(rid, (int, float)) else None)
    mode = obj.get("mode")
    if mode not in MODES:
        raise RequestError(f"mode must be one of {list(MODES)}", rid)
    heads = obj.get("heads")
    if not isinstance(heads, list):
        raise RequestError("heads must be a list of arrays", rid)
    if len(heads) < 2:
        raise RequestError("M >= 2 required", rid)
    if not all(isinstance(h, list) and h and all(_finite_number(v) for v in h) for h in heads):
        raise RequestError("each head must be a nonempty array of finite numbers", rid)
    n = len(heads[0])
    if any(len(h) != n for h in heads):
        raise RequestError("head arrays differ in length", rid)
    shape = obj.get("shape", [n])
    if (not isinstance(shape, list) or not shape
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in shape)):
        raise RequestError("shape must be a list of positive integers", rid)
    if math.prod(shape) != n:
        raise RequestError(f"shape {shape} does not match head length {n}", rid)
    if mode == REGRESSION and len(shape) not in (2, 3):
        raise RequestError("regression shape must be [H, W] or [K, H, W]", rid)
    if mode != REGRESSION and len(shape) != 1:
        raise RequestError("classification shape must be [C]", rid)
    tau = obj.get("tau", default_tau)
    if not _finite_number(tau) or not 0.0 <= tau <= 1.0:
        raise RequestError("tau must be a number in [0, 1]", rid)
    arr = np.asarray(heads, dtype=float)
    if np.any(arr < 0):
        raise RequestError("head values must be nonnegative", rid)
    if mode == REGRESSION and len(shape) == 2:
        shape = [1] + shape
    return rid, mode, arr.reshape([len(heads)] + list(shape)), float(tau)


class Scorer:
    """Stateful NDJSON scorer. Pure given its input stream and initial state."""

    def __init__(self, default_tau=0.0, normalize=False, decay=0.7, state=None):
        self.default_tau = float(default_tau)
        self.normalize = bool(normalize)
        self.decay = decay
        self.state = state
        self.n_batches = 0

    def score_batch(self, lines):
        """Score one batch of raw lines and return the output records."""
        parsed = []
        for line in lines:
            try:
                parsed.append(parse_request(line, self.default_tau))
            except RequestError as exc:
                parsed.append({"id": exc.args[1], "error": exc.args[0]})
        good = [p for p in parsed if isinstance(p, tuple)]
        batch_no = self.n_batches
        self.n_batches += 1
        if not good:
            return parsed
        modes = {p[1] for p in good}
        shapes = {p[2].shape for p in good}
        problem = None
        if len(modes) > 1:
            problem = "mixed modes within batch"
        elif len(shapes) > 1:
            problem = "inconsistent head shapes within batch: " + ", ".join(str(list(s)) for s in sorted(shapes))
        elif self.state is not None and self.state.n_heads != good[0][2].shape[0]:
            problem = f"head count {good[0][2].shape[0]} differs from state ({self.state.n_heads})"
        if problem:
            return [{"batch": batch_no, "error": problem, "ids": [p[0] if isinstance(p, tuple) else p["id"] for p in parsed]}]
        return self._score(parsed, good, batch_no)

    def _score(self, parsed, good, batch_no):
        mode = good[0][1]
        batch = HeadBatch(np.stack([p[2] for p in good]), mode)
        u_s = sample_uncertainty(batch)
        w_s = long_tailed_weights(u_s)
        u_h = head_uncertainty(batch)
        if self.state is None:
            self.state = HeadWeightState(batch.n_heads, self.decay)
        instant = head_weights(u_h, mode)
        self.state = ema_update(self.state, instant, u_h)
        w_h = self.state.ema_weights
        taus = np.array([p[3] for p in good])
        ensemble = np.empty((len(good),) + batch.predictions.shape[2:])
        mask = np.zeros(len(good), dtype=bool)
        for tau in np.unique(taus):
            rows = np.flatnonzero(taus == tau)
            cfg = PseudoLabelConfig(tau=float(tau), warmup_epochs=0, normalize_ensemble=self.normalize)
            pl = ensemble_prediction(batch.predictions[rows], w_h, cfg, 0, mode)
            ensemble[rows] = pl.ensemble
            mask[rows] = pl.mask
        out, j = [], 0
        for p in parsed:
            if not isinstance(p, tuple):
                out.append(p)
                continue
            out.append({
                "id": p[0],
                "sample_uncertainty": float(u_s[j]),
                "sample_weight": float(w_s[j]),
                "mask": bool(mask[j]),
                "ensemble": ensemble[j].ravel().tolist(),
            })
            j += 1
        out.append({
            "batch": batch_no,
            "head_uncertainties": u_h.tolist(),
            "head_weights_instant": instant.tolist(),
            "head_weights_ema": w_h.tolist(),
        })
        return out


def iter_batches(lines, batch_size=0):
    """Group raw lines into batches at blank lines or every ``batch_size`` requests."""
    batch = []
    for raw in lines:
        line = raw.strip()
        if not line:
            if batch:
                yield batch
                batch = []
            continue
        batch.append(line)
        if batch_size and len(batch) >= batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def score_stream(lines, scorer, batch_size=0):
    """Yield output records for an iterable of input lines."""
    for batch in iter_batches(lines, batch_size):
        yield from scorer.score_batch(batch)


def score_text(text, **kw):
    """Score a whole NDJSON document and return the NDJSON output."""
    batch_size = kw.pop("batch_size", 0)
    scorer = Scorer(**kw)
    return "".join(dumps(r) + "\n" for r in score_stream(text.splitlines(), scorer, batch_size))


def _hard(record, shape):
    if not record.get("mask"):
        return None
    e = np.asarray(record["ensemble"], dtype=float).reshape(shape)
    label = hard_label_of(e, "regression" if len(shape) >= 2 else "classification")
    return np.asarray(label).tolist()


def verify_hard_labels(requests, fresh, previous):
    """Compare hard labels decoded from two output streams.

    ``requests`` maps id to (mode, event shape); ``fresh`` and ``previous`` are
    lists of response records. Returns the ids whose hard labels differ.
    """
    prev = {r["id"]: r for r in previous if "ensemble" in r}
    bad = []
    for r in fresh:
        if "ensemble" not in r:
            continue
        other = prev.get(r["id"])
        mode, shape = requests[r["id"]]
        if other is None or _hard(r, shape) != _hard(other, shape):
            bad.append(r["id"])
    return bad


def state_to_json(state):
    return dumps(state.to_dict()) + "\n"


def state_from_json(text):
    return HeadWeightState.from_dict(json.loads(text))
