"""
Scoring predictions from another framework
==========================================

Any model with several heads can send its per-head probabilities as NDJSON
and get back sample uncertainties, weights and ensemble pseudo-labels. This
is the same code path as ``ues score``.
"""

import json

import numpy as np

from ues.scoring import score_text

rng = np.random.default_rng(11)

###############################################################################
# Two batches of four requests, separated by a blank line. The third head is
# systematically off, so its weight shrinks and the EMA carries that forward.
lines = []
for b in range(2):
    for i in range(4):
        good = rng.dirichlet([8, 1, 1])
        off = np.roll(good, 1)
        lines.append(json.dumps({"id": f"{b}-{i}", "mode": "classification",
                                 "heads": [good.tolist(), good.tolist(), off.tolist()]}))
    lines.append("")
lines.append(json.dumps({"id": "lonely", "mode": "classification", "heads": [[0.5, 0.5]]}))

out = score_text("\n".join(lines), default_tau=0.1)
for line in out.splitlines():
    rec = json.loads(line)
    if "head_weights_ema" in rec:
        print("batch", rec["batch"], "ema head weights", np.round(rec["head_weights_ema"], 3))
    elif "error" in rec:
        print(rec["id"], "error:", rec["error"])
    else:
        print(rec["id"], "weight", round(rec["sample_weight"], 3), "label", int(np.argmax(rec["ensemble"])))
