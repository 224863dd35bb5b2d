"""
Sample and head uncertainty from disagreeing heads
==================================================

Five heads look at the same six samples. We measure how much they disagree
per sample and per head, turn that into weights, and build the weighted
ensemble pseudo-label.
"""

import numpy as np

from ues import HeadBatch, ensemble_prediction, head_uncertainty, head_weights, long_tailed_weights
from ues import PseudoLabelConfig, sample_uncertainty

rng = np.random.default_rng(3)

###############################################################################
# Start from a confident consensus and perturb it. Sample 5 gets noisy heads,
# and head 4 is biased towards class 2 on every sample.
base = np.array([[0.85, 0.10, 0.05]] * 6)
preds = np.repeat(base[:, None, :], 5, axis=1)
preds[5] = rng.dirichlet(np.ones(3), size=5)
preds[:, 4] = 0.5 * preds[:, 4] + 0.5 * np.array([0.0, 0.0, 1.0])
batch = HeadBatch(preds, "classification")

###############################################################################
# Per-sample uncertainty is the class-averaged variance across heads. The
# long-tailed transform keeps every weight between 0.5 and 1.
u = sample_uncertainty(batch)
w = long_tailed_weights(u)
for i, (ui, wi) in enumerate(zip(u, w)):
    print(f"sample {i}: uncertainty {ui:.4f} weight {wi:.3f}")

###############################################################################
# Head uncertainty counts disagreements with the mean argmax. Softmax of the
# negated uncertainty gives each head its share of trust.
u_h = head_uncertainty(batch)
print("head uncertainty", np.round(u_h, 3))
print("head weights    ", np.round(head_weights(u_h, "classification"), 3))

###############################################################################
# The ensemble only keeps heads whose weighted peak clears the threshold.
# Weighted peaks live on the scale of 1/M, so the threshold does too.
pl = ensemble_prediction(batch, head_weights(u_h, "classification"), PseudoLabelConfig(tau=0.15, warmup_epochs=0), 0)
print("mask", pl.mask)
print("hard labels", pl.hard_labels())

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, ax = plt.subplots(1, 2, figsize=(8, 3))
ax[0].bar(range(len(u)), w)
ax[0].set_ylim(0, 1.05)
ax[0].set_title("sample weights")
ax[1].bar(range(5), head_weights(u_h, "classification"))
ax[1].set_title("head weights")
fig.tight_layout()
fig.savefig("uncertainty_basics.png")
