"""Ranking and calibration metrics on a hand-made score set.

AUROC uses the rank formulation (ties count half), AUPRC is average
precision with tie grouping, and ECE bins confidence against accuracy.
"""

import numpy as np

from tabfusion.metrics import auprc, auroc, ece

labels = np.array([0, 0, 0, 0, 0, 0, 1, 1, 1, 0])

for name, scores in (
    ("perfect ranking ", np.array([0.1, 0.2, 0.1, 0.3, 0.2, 0.1, 0.8, 0.9, 0.7, 0.4])),
    ("noisy ranking   ", np.array([0.1, 0.6, 0.1, 0.3, 0.2, 0.1, 0.8, 0.4, 0.7, 0.5])),
    ("constant scores ", np.full(10, 0.3)),
):
    print(
        f"{name}: auroc {auroc(scores, labels):.3f}  auprc {auprc(scores, labels):.3f}  "
        f"ece {ece(scores, labels, bins=5):.3f}"
    )

print("\nconstant scores give auroc 0.5 and auprc equal to the positive rate (0.3)")
