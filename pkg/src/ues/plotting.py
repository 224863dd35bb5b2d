"""Static SVG plots of training reports, each with a CSV of the plotted values.

Plots read ``report.json`` written by a single run or by an ablation (which
nests runs under ``"runs"``). The CSV text is also embedded in the SVG
metadata so the figure carries its own data table.
"""

import csv
import io
import json
import os

from .trainer import atomic_write

KINDS = ("histogram", "correlation", "curves")


class PlotError(ValueError):
    pass


def load_runs(report):
    """Map run name to report dict for single-run or ablation reports."""
    if "runs" in report:
        runs = report["runs"]
    elif "records" in report:
        runs = {"run": report}
    else:
        raise PlotError("report has neither 'runs' nor 'records'")
    if not runs or any(not r.get("records") for r in runs.values()):
        raise PlotError("report contains a run without epoch records")
    return runs


def _csv(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _cell(v):
    return "" if v is None else repr(v)


def _primary_metric(records):
    keys = records[0]["metrics"]
    for k in ("accuracy", "pck@0.2"):
        if k in keys:
            return k
    return sorted(keys)[0]


def histogram_table(runs):
    name = "sw_phw" if "sw_phw" in runs else sorted(runs)[0]
    records = runs[name]["records"]
    bins = len(records[0]["uncertainty_histogram"])
    header = ["epoch", *[f"bin_{b}" for b in range(bins)]]
    rows = [[r["epoch"], *r["uncertainty_histogram"]] for r in records]
    return name, header, rows


def correlation_table(runs):
    names = list(runs)
    n = min(len(runs[k]["records"]) for k in names)
    rows = [[runs[names[0]]["records"][i]["epoch"],
             *[_cell(runs[k]["records"][i]["uncertainty_correlation"]) for k in names]] for i in range(n)]
    return ["epoch", *names], rows


def curves_table(runs, metric=None):
    names = list(runs)
    metric = metric or _primary_metric(runs[names[0]]["records"])
    n = min(len(runs[k]["records"]) for k in names)
    rows = [[runs[names[0]]["records"][i]["epoch"],
             *[_cell(runs[k]["records"][i]["metrics"].get(metric)) for k in names]] for i in range(n)]
    return metric, ["epoch", *names], rows


def render(report, kind, metric=None, epoch=-1):
    """Return ``(svg_text, csv_text)`` for one plot kind."""
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = load_runs(report)
    plt.rcParams["svg.hashsalt"] = "ues"
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        if kind == "histogram":
            name, header, rows = histogram_table(runs)
            counts = rows[epoch][1:]
            upper = runs[name].get("histogram_upper") or 1.0
            width = upper / len(counts)
            lefts = [b * width for b in range(len(counts))]
            ax.bar(lefts, counts, width=width, align="edge", edgecolor="black")
            ax.set_xlabel("sample uncertainty")
            ax.set_ylabel("count")
            ax.set_title(f"uncertainty distribution, {name}, epoch {rows[epoch][0]}")
        elif kind == "correlation":
            header, rows = correlation_table(runs)
            for j, name in enumerate(header[1:], start=1):
                pts = [(r[0], float(r[j])) for r in rows if r[j] != ""]
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name)
            ax.set_xlabel("epoch")
            ax.set_ylabel("Pearson(uncertainty, correct)")
            ax.legend()
        else:
            metric, header, rows = curves_table(runs, metric)
            for j, name in enumerate(header[1:], start=1):
                pts = [(r[0], float(r[j])) for r in rows if r[j] != ""]
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name)
            ax.set_xlabel("epoch")
            ax.set_ylabel(metric)
            ax.legend()
        table = _csv(header, rows)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Description": table, "Title": kind})
    finally:
        plt.close(fig)
    return buf.getvalue(), table


def plot_report(path, kind, out_dir=None, metric=None, epoch=-1):
    """Write ``<kind>.svg`` and ``<kind>.csv`` next to the report (or in ``out_dir``)."""
    try:
        with open(path) as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PlotError(f"cannot read report {path}: {exc}") from None
    svg, table = render(report, kind, metric, epoch)
    out_dir = out_dir or os.path.dirname(os.path.abspath(path))
    svg_path = os.path.join(out_dir, f"{kind}.svg")
    csv_path = os.path.join(out_dir, f"{kind}.csv")
    atomic_write(svg_path, svg.encode())
    atomic_write(csv_path, table.encode())
    return svg_path, csv_path
