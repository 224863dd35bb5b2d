"""
Two moons with four labels
==========================

Trains the three ablation settings plus a supervised baseline on the
two-moons task and plots test accuracy per epoch. The full experiment lives
in ``configs/moons.toml``; here the epoch count is cut for a quick look.
Set ``UES_DEMO_FULL=1`` to run the full schedule.
"""

import os
from dataclasses import replace
from pathlib import Path

from ues.config import load_config
from ues.trainer import run_ablation

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "moons.toml")
if not os.environ.get("UES_DEMO_FULL"):
    cfg = replace(cfg, epochs=300)

runs = run_ablation(cfg, include_supervised=True)
for name, report in runs.items():
    print(f"{name:>10}: accuracy {report.final_metrics()['accuracy']:.3f}")

###############################################################################
# Accuracy curves. The unlabeled runs pull away from the supervised one once
# warm-up ends and pseudo-labels start to follow the moon shapes.
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6, 4))
for name, report in runs.items():
    ax.plot([r.metrics["accuracy"] for r in report.records], label=name)
ax.set_xlabel("epoch")
ax.set_ylabel("test accuracy")
ax.legend()
fig.savefig("two_moons_ablation.png")

###############################################################################
# The uncertainty histogram of the full run collapses towards zero as the
# heads come to agree on the unlabeled points.
records = runs["sw_phw"].records
print("bin counts, first epoch:", records[0].uncertainty_histogram)
print("bin counts, last epoch: ", records[-1].uncertainty_histogram)
