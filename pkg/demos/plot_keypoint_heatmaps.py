"""
Keypoint heatmaps on synthetic images
=====================================

A single bright blob marks the keypoint. Heads predict a heatmap per image;
the weak view's ensemble heatmap is warped into the strong view's frame
before it serves as a target.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from ues import taskgen
from ues.config import load_config
from ues.trainer import Trainer

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "keypoints.toml")
cfg = replace(cfg, epochs=40)
tr = Trainer(cfg)
report = tr.train()
print({k: round(v, 3) for k, v in report.final_metrics().items()})

###############################################################################
# Look at a few test images next to the mean heatmap and the decoded peak.
batch = tr.net.forward(tr.data.test_x[:4])
mean_map = batch.predictions.mean(axis=1)[:, 0]

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, ax = plt.subplots(2, 4, figsize=(10, 5))
for i in range(4):
    gt = tr.data.test_y[i, 0]
    ax[0, i].imshow(tr.data.test_x[i], cmap="gray")
    ax[0, i].plot(*gt, "g+")
    ax[1, i].imshow(mean_map[i])
    y, x = np.unravel_index(np.argmax(mean_map[i]), mean_map[i].shape)
    ax[1, i].plot(x, y, "r+")
fig.savefig("keypoint_heatmaps.png")

###############################################################################
# Augmentation moves the image and its keypoint together.
rng = np.random.default_rng(0)
img, kp = taskgen.augment_images(tr.data.x[:1], rng, taskgen.STRONG, keypoints=tr.data.y[:1])
print("keypoint before", tr.data.y[0, 0], "after", np.round(kp[0, 0], 2))
