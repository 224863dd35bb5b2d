"""Semi-supervised training loop with uncertainty-weighted pseudo-labels.

Each step runs a supervised pass on weakly augmented labeled data and an
unlabeled pass where the weak view produces head weights, an ensemble
pseudo-label and long-tailed sample weights, and the strong view receives
the weighted ensemble loss.
"""

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import metrics, taskgen
from .losses import ensemble_loss, one_hot, supervised_loss
from .pseudolabel import PseudoLabelConfig, ensemble_prediction
from .tinynet import NetSpec, TinyNet, TrainingDivergenceError, save_checkpoint
from .uncertainty import (
    CLASSIFICATION,
    REGRESSION,
    HeadBatch,
    HeadWeightState,
    ema_update,
    head_uncertainty,
    head_weights,
    long_tailed_weights,
    sample_uncertainty,
)

log = logging.getLogger(__name__)

HEATMAP_SIGMA = 1.5
CORRECT_PCK = 0.2
HIST_BINS = 10


@dataclass(frozen=True)
class TrainConfig:
    # data
    task: str = "moons"
    n_total: int = 204
    n_labeled: int = 4
    n_test: int = 1000
    noise: float = 0.1
    image_size: int = 32
    n_keypoints: int = 1
    n_classes: int = 2
    # model
    hidden: tuple = (64, 64)
    heads: int = 5
    head_hidden: int = 0
    # optimisation
    epochs: int = 200
    batch_size: int = 4
    mu: int = 7
    lr: float = 0.03
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    lambda_u: float = 1.0
    # pseudo-labels
    tau: float = 0.9
    warmup_epochs: int = 5
    normalize_ensemble: bool = False
    hard_labels: bool = False
    ema_decay: float = 0.7
    use_sample_weights: bool = True
    use_head_weights: bool = True
    eval_weighted: bool = False
    # bookkeeping
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 0 or self.batch_size < 1 or self.heads < 2:
            raise ValueError("epochs >= 0, batch_size >= 1 and heads >= 2 required")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.lambda_u < 0:
            raise ValueError("lambda_u must be >= 0")
        self.dataset_spec()
        self.pseudo_config()

    @property
    def mode(self):
        return REGRESSION if self.task == "keypoints" else CLASSIFICATION

    def dataset_spec(self):
        return taskgen.DatasetSpec(
            task=self.task,
            n_total=self.n_total,
            n_labeled=self.n_labeled,
            mu=self.mu,
            noise=self.noise,
            seed=self.seed,
            n_test=self.n_test,
            image_size=self.image_size,
            n_keypoints=self.n_keypoints,
            n_classes=self.n_classes,
        )

    def net_spec(self):
        if self.mode == REGRESSION:
            return NetSpec(
                mode=REGRESSION,
                input_dim=self.image_size ** 2,
                hidden=self.hidden,
                heads=self.heads,
                n_keypoints=self.n_keypoints,
                grid=(self.image_size, self.image_size),
                head_hidden=self.head_hidden,
                output_bias=-4.0,
                seed=self.seed,
            )
        return NetSpec(
            mode=CLASSIFICATION,
            input_dim=2,
            hidden=self.hidden,
            heads=self.heads,
            n_classes=self.n_classes,
            head_hidden=self.head_hidden,
            seed=self.seed,
        )

    def pseudo_config(self):
        return PseudoLabelConfig(self.tau, self.warmup_epochs, self.normalize_ensemble)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(unknown[0])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss_supervised: float
    loss_ensemble: float
    metrics: dict
    mask_rate: float
    mean_uncertainty: float
    uncertainty_correlation: float  # None when undefined
    uncertainty_histogram: list
    head_weights: list

    def to_dict(self):
        return asdict(self)


@dataclass
class RunReport:
    config: TrainConfig
    records: list = field(default_factory=list)
    net: TinyNet = None
    histogram_upper: float = None
    diverged: bool = False

    def final_metrics(self):
        return self.records[-1].metrics if self.records else {}

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "histogram_upper": self.histogram_upper,
            "diverged": self.diverged,
            "records": [r.to_dict() for r in self.records],
        }


# -- evaluation ---------------------------------------------------------------

def evaluate(net, x, y, cfg, weights=None):
    """Test metrics: accuracy/error rate, or distance and PCK at each threshold."""
    if net.spec.mode == CLASSIFICATION:
        err = metrics.error_rate(net, x, y, weights)
        return {"accuracy": 1.0 - err, "error_rate": err}
    preds = metrics.predict_keypoints(net, x, weights)
    out = {"mse": metrics.mse_metric(preds, y)}
    norm = metrics.pck_norm(cfg.image_size)
    for t in metrics.PCK_THRESHOLDS:
        out[f"pck@{t}"] = metrics.pck(preds, y, norm, t)
    return out


def probe_diagnostics(net, x, y, cfg):
    """Sample uncertainties and per-sample correctness of the mean ensemble."""
    batch = net.forward(x)
    u = sample_uncertainty(batch)
    ref = batch.predictions.mean(axis=1)
    if net.spec.mode == CLASSIFICATION:
        correct = np.argmax(ref, axis=-1) == y
    else:
        d = metrics.keypoint_distances(metrics.heatmap_peaks(ref), y)
        correct = np.all(d / metrics.pck_norm(cfg.image_size) <= CORRECT_PCK, axis=-1)
    return u, correct


# -- training -----------------------------------------------------------------

def _targets(cfg, y):
    if cfg.mode == CLASSIFICATION:
        return one_hot(y, cfg.n_classes)
    return taskgen.render_heatmaps(y, (cfg.image_size, cfg.image_size), HEATMAP_SIGMA)


def _hard_targets(cfg, pseudo):
    if cfg.mode == CLASSIFICATION:
        return one_hot(np.argmax(pseudo.ensemble, axis=-1), cfg.n_classes)
    peaks = metrics.heatmap_peaks(pseudo.ensemble)
    return taskgen.render_heatmaps(peaks, (cfg.image_size, cfg.image_size), HEATMAP_SIGMA)


class Trainer:
    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        self.data = dataset if dataset is not None else taskgen.generate(cfg.dataset_spec())
        self.net = TinyNet.init(
            cfg.net_spec(),
            lr=cfg.lr,
            momentum=cfg.momentum,
            nesterov=cfg.nesterov,
            weight_decay=cfg.weight_decay,
        )
        self.head_state = HeadWeightState(cfg.heads, cfg.ema_decay)
        self.pl_cfg = cfg.pseudo_config()
        root = np.random.SeedSequence([cfg.seed, 0x7EA1])
        lab_seq, unl_seq = root.spawn(2)
        # separate streams keep the labeled path independent of the unlabeled one
        self.rng_labeled = np.random.default_rng(lab_seq)
        self.rng_unlabeled = np.random.default_rng(unl_seq)
        self.stream = taskgen.BatchStream(self.data, cfg.batch_size, cfg.mu, cfg.seed)
        self.report = RunReport(cfg)

    def _labeled_view(self, idx):
        x, y = self.data.x[idx], self.data.y[idx]
        if self.cfg.mode == CLASSIFICATION:
            return taskgen.augment_points(x, self.rng_labeled, taskgen.WEAK), _targets(self.cfg, y)
        xa, kp = taskgen.augment_images(x, self.rng_labeled, taskgen.WEAK, keypoints=y)
        return xa, _targets(self.cfg, kp)

    def _unlabeled_views(self, idx):
        x = self.data.x[idx]
        rng = self.rng_unlabeled
        if self.cfg.mode == CLASSIFICATION:
            return taskgen.augment_points(x, rng, taskgen.WEAK), taskgen.augment_points(x, rng, taskgen.STRONG), None
        xw, mw = taskgen.augment_images(x, rng, taskgen.WEAK, return_matrices=True)
        xs, ms = taskgen.augment_images(x, rng, taskgen.STRONG, return_matrices=True)
        # maps weak-view coordinates onto strong-view coordinates
        return xw, xs, ms @ np.linalg.inv(mw)

    def _current_head_weights(self, weak_batch):
        cfg = self.cfg
        if not cfg.use_head_weights:
            return np.full(cfg.heads, 1.0 / cfg.heads)
        u_h = head_uncertainty(weak_batch)
        self.head_state = ema_update(self.head_state, head_weights(u_h, cfg.mode), u_h)
        return self.head_state.ema_weights

    def step(self, epoch, lab_idx, unl_idx):
        cfg, net = self.cfg, self.net
        xl, tl = self._labeled_view(lab_idx)
        n_l = len(lab_idx)
        stats = {"masked_in": 0, "unlabeled": 0, "loss_e": 0.0}
        if len(unl_idx) and cfg.lambda_u > 0:
            xw, xs, warp = self._unlabeled_views(unl_idx)
            weak = net.forward(xw)
            w_h = self._current_head_weights(weak)
            pseudo = ensemble_prediction(weak, w_h, self.pl_cfg, epoch)
            u_s = sample_uncertainty(weak)
            w_s = long_tailed_weights(u_s) if cfg.use_sample_weights else np.ones(len(unl_idx))
            if cfg.hard_labels:
                pseudo.ensemble = _hard_targets(cfg, pseudo)
            if warp is not None:
                pseudo.ensemble = np.stack([taskgen.warp_image(e, a) for e, a in zip(pseudo.ensemble, warp)])
            z, cache = net.forward_raw(np.concatenate([xl, xs]))
            loss_l, g_l = supervised_loss(z[:n_l], tl, cfg.mode)
            loss_e, g_e, _ = ensemble_loss(z[n_l:], pseudo, w_s, cfg.mode)
            grad = np.concatenate([g_l, cfg.lambda_u * g_e])
            stats.update(masked_in=int(pseudo.mask.sum()), unlabeled=len(unl_idx), loss_e=loss_e)
        else:
            z, cache = net.forward_raw(xl)
            loss_l, grad = supervised_loss(z, tl, cfg.mode)
        total = loss_l + cfg.lambda_u * stats["loss_e"]
        if not np.isfinite(total):
            raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
        net.backward_and_step(grad, cache)
        stats["loss_l"] = loss_l
        return stats

    def run_epoch(self, epoch):
        cfg = self.cfg
        acc = {"loss_l": 0.0, "loss_e": 0.0, "masked_in": 0, "unlabeled": 0, "steps": 0}
        for lab_idx, unl_idx in self.stream.epoch():
            s = self.step(epoch, lab_idx, unl_idx)
            for k in ("loss_l", "loss_e", "masked_in", "unlabeled"):
                acc[k] += s[k]
            acc["steps"] += 1
        eval_w = self.head_state.ema_weights if cfg.eval_weighted else None
        m = evaluate(self.net, self.data.test_x, self.data.test_y, cfg, eval_w)
        corr, mean_u, hist = None, 0.0, []
        probe = self.data.unlabeled_idx
        if len(probe):
            u, correct = probe_diagnostics(self.net, self.data.x[probe], self.data.y[probe], cfg)
            if self.report.histogram_upper is None:
                self.report.histogram_upper = float(u.max())
            corr = metrics.uncertainty_accuracy_correlation(u, correct)
            mean_u = float(u.mean())
            hist = metrics.uncertainty_histogram(u, HIST_BINS, self.report.histogram_upper).tolist()
        steps = max(acc["steps"], 1)
        return EpochRecord(
            epoch=epoch,
            loss_supervised=acc["loss_l"] / steps,
            loss_ensemble=acc["loss_e"] / steps,
            metrics=m,
            mask_rate=acc["masked_in"] / acc["unlabeled"] if acc["unlabeled"] else 0.0,
            mean_uncertainty=mean_u,
            uncertainty_correlation=corr,
            uncertainty_histogram=hist,
            head_weights=self.head_state.ema_weights.tolist(),
        )

    def train(self):
        last_good = save_checkpoint(self.net)
        try:
            for epoch in range(self.cfg.epochs):
                rec = self.run_epoch(epoch)
                self.report.records.append(rec)
                last_good = save_checkpoint(self.net)
                log.debug("epoch %d %s", epoch, rec.metrics)
        except TrainingDivergenceError:
            self.report.diverged = True
            if self.cfg.output_dir:
                atomic_write(os.path.join(self.cfg.output_dir, "last_good.ckpt"), last_good)
            raise
        self.report.net = self.net
        return self.report


def train(cfg, dataset=None):
    """Train one run and, if ``cfg.output_dir`` is set, write its artifacts."""
    report = Trainer(cfg, dataset).train()
    if cfg.output_dir:
        write_artifacts(report, cfg.output_dir)
    return report


ABLATIONS = {
    "neither": {"use_sample_weights": False, "use_head_weights": False},
    "sw": {"use_sample_weights": True, "use_head_weights": False},
    "sw_phw": {"use_sample_weights": True, "use_head_weights": True},
}


def run_ablation(cfg, include_supervised=False):
    """Run the three ablation settings (and optionally a supervised baseline)."""
    variants = dict(ABLATIONS)
    if include_supervised:
        variants["supervised"] = {"lambda_u": 0.0, "use_head_weights": False}
    runs = {}
    for name, flags in variants.items():
        out = os.path.join(cfg.output_dir, name) if cfg.output_dir else ""
        runs[name] = train(replace(cfg, output_dir=out, **flags))
    if cfg.output_dir:
        combined = {"runs": {name: r.to_dict() for name, r in runs.items()}}
        atomic_write(os.path.join(cfg.output_dir, "report.json"), _dumps(combined).encode())
    return runs


# -- artifacts ----------------------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False)


def atomic_write(path, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv(report):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    if not report.records:
        wr.writerow(["epoch"])
        return buf.getvalue()
    metric_keys = list(report.records[0].metrics)
    n_heads = len(report.records[0].head_weights)
    wr.writerow(
        ["epoch", "loss_supervised", "loss_ensemble", *metric_keys, "mask_rate", "mean_uncertainty",
         "uncertainty_correlation", *[f"head_weight_{m}" for m in range(n_heads)]]
    )
    for r in report.records:
        corr = "" if r.uncertainty_correlation is None else repr(r.uncertainty_correlation)
        wr.writerow(
            [r.epoch, repr(r.loss_supervised), repr(r.loss_ensemble), *[repr(r.metrics[k]) for k in metric_keys],
             repr(r.mask_rate), repr(r.mean_uncertainty), corr, *[repr(w) for w in r.head_weights]]
        )
    return buf.getvalue()


def write_artifacts(report, out_dir):
    meta = {
        "task_signature": task_signature(report.config),
        "config": report.config.to_dict(),
        "head_weights": report.records[-1].head_weights if report.records else None,
    }
    atomic_write(os.path.join(out_dir, "final.ckpt"), save_checkpoint(report.net, meta))
    atomic_write(os.path.join(out_dir, "metrics.csv"), metrics_csv(report).encode())
    atomic_write(os.path.join(out_dir, "report.json"), _dumps(report.to_dict()).encode())


def task_signature(cfg):
    """Everything about a config that decides which checkpoints it can evaluate."""
    return {
        "dataset": cfg.dataset_spec().to_dict(),
        "net_spec_hash": cfg.net_spec().digest(),
    }
