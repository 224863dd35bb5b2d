"""Command-line entry point: ``ues train|eval|score|plot``.

Exit codes: 0 success, 1 runtime failure (bad checkpoint, signature mismatch,
failed verification), 2 configuration or usage error, 3 training divergence.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import scoring, taskgen
from .config import load_config, parse_value
from .plotting import KINDS, PlotError, plot_report
from .probcore import InvalidInputError
from .tinynet import CheckpointError, TrainingDivergenceError, load_checkpoint, read_checkpoint_header
from .trainer import atomic_write, evaluate, run_ablation, task_signature, train
from .uncertainty import ConfigError

EXIT_RUNTIME, EXIT_CONFIG, EXIT_DIVERGED = 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _overrides(pairs):
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _config(args, extra=None):
    overrides = _overrides(args.set)
    overrides.update(extra or {})
    return load_config(args.config, overrides, args.seed)


def cmd_train(args):
    extra = {}
    if args.no_sample_weights:
        extra["use_sample_weights"] = False
    if args.no_head_weights:
        extra["use_head_weights"] = False
    if args.output_dir:
        extra["output_dir"] = args.output_dir
    cfg = _config(args, extra)
    if not cfg.output_dir:
        raise ConfigError("output_dir: required (set it in the config or pass --output-dir)")
    try:
        if args.ablation:
            runs = run_ablation(cfg, include_supervised=args.supervised)
            for name, report in runs.items():
                print(f"{name}: {_format(report.final_metrics())}")
        else:
            report = train(cfg)
            print(_format(report.final_metrics()))
    except TrainingDivergenceError as exc:
        raise CliError(f"training diverged: {exc} (last good checkpoint kept in {cfg.output_dir})", EXIT_DIVERGED)
    return 0


def _format(m):
    return " ".join(f"{k}={v!r}" for k, v in m.items())


def cmd_eval(args):
    cfg = _config(args)
    try:
        with open(args.checkpoint, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}", EXIT_RUNTIME)
    try:
        header, _ = read_checkpoint_header(blob)
        net = load_checkpoint(blob)
    except CheckpointError as exc:
        raise CliError(f"bad checkpoint: {exc}", EXIT_RUNTIME)
    meta = header.get("meta") or {}
    expected = task_signature(cfg)
    if meta.get("task_signature") != expected:
        raise CliError("checkpoint task signature does not match the config; refusing to evaluate", EXIT_RUNTIME)
    data = taskgen.generate(cfg.dataset_spec())
    weights = None
    if cfg.eval_weighted and meta.get("head_weights") is not None:
        weights = np.asarray(meta["head_weights"])
    m = evaluate(net, data.test_x, data.test_y, cfg, weights)
    for k, v in m.items():
        print(f"{k} {v!r}")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(m))
    wr.writerow([repr(v) for v in m.values()])
    out = args.output or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "eval.csv")
    atomic_write(out, buf.getvalue().encode())
    return 0


def _read_lines(path):
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    try:
        with open(path) as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_RUNTIME)


def cmd_score(args):
    state = None
    if args.state_file and os.path.exists(args.state_file):
        try:
            with open(args.state_file) as fh:
                state = scoring.state_from_json(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot load state file: {exc}", EXIT_RUNTIME)
    if not 0.0 <= args.tau <= 1.0:
        raise ConfigError("tau: must lie in [0, 1]")
    lines = _read_lines(args.input)
    scorer = scoring.Scorer(args.tau, args.normalize, args.ema_decay, state)
    records = list(scoring.score_stream(lines, scorer, args.batch_size))
    text = "".join(scoring.dumps(r) + "\n" for r in records)
    if args.output:
        atomic_write(args.output, text.encode())
    else:
        sys.stdout.write(text)
    if args.state_file and scorer.state is not None:
        atomic_write(args.state_file, scoring.state_to_json(scorer.state).encode())
    if args.verify:
        requests = {}
        for line in lines:
            try:
                rid, mode, arr, _ = scoring.parse_request(line, args.tau)
                requests[rid] = (mode, arr.shape[1:])
            except scoring.RequestError:
                pass
        previous = [json.loads(line) for line in _read_lines(args.verify) if line.strip()]
        bad = scoring.verify_hard_labels(requests, records, previous)
        if bad:
            raise CliError(f"hard labels differ for: {', '.join(map(str, bad))}", EXIT_RUNTIME)
        print("verify: hard labels match", file=sys.stderr)
    return 0


def cmd_plot(args):
    try:
        svg, table = plot_report(args.report, args.kind, args.output_dir, args.metric)
    except PlotError as exc:
        raise CliError(str(exc), EXIT_RUNTIME)
    print(svg)
    print(table)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ues", description="Uncertainty-weighted semi-supervised training tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="overrides UES_SEED and the config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    t = sub.add_parser("train", help="train a model and write checkpoint, metrics.csv and report.json")
    config_args(t)
    t.add_argument("--output-dir")
    t.add_argument("--no-sample-weights", action="store_true")
    t.add_argument("--no-head-weights", action="store_true")
    t.add_argument("--ablation", action="store_true", help="run neither / sw / sw_phw variants")
    t.add_argument("--supervised", action="store_true", help="with --ablation, add a supervised baseline")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the config's test set")
    e.add_argument("checkpoint")
    config_args(e)
    e.add_argument("--output", help="CSV path (default: eval.csv next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="score NDJSON head predictions")
    s.add_argument("input", nargs="?", default="-", help="NDJSON file, or - for stdin")
    s.add_argument("--output")
    s.add_argument("--batch-size", type=int, default=0, help="requests per batch (0: blank lines only)")
    s.add_argument("--tau", type=float, default=0.0, help="default threshold for requests without one")
    s.add_argument("--normalize", action="store_true", help="divide ensembles by the passing weight mass")
    s.add_argument("--ema-decay", type=float, default=0.7)
    s.add_argument("--state-file", help="load and save head-weight EMA state")
    s.add_argument("--verify", metavar="PREVIOUS_OUTPUT", help="check hard labels against an earlier output")
    s.set_defaults(func=cmd_score)

    pl = sub.add_parser("plot", help="render report.json as SVG plus CSV")
    pl.add_argument("report")
    pl.add_argument("--kind", required=True, choices=KINDS)
    pl.add_argument("--output-dir")
    pl.add_argument("--metric", help="metric for curves (default: accuracy or pck@0.2)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
