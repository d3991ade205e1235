"""
Per-frame mean average precision
================================

Rank frames by score for every class, average the precision at each
positive frame and average over classes that have positives.
"""

import numpy as np

from cornet.losses import average_precision, per_frame_map

# A perfect ranking, a reversed one and a mixed one.
print(average_precision([0.9, 0.1], [1, 0]))
print(average_precision([0.1, 0.9], [1, 0]))
print(average_precision([0.9, 0.8, 0.1], [1, 0, 1]))

# Equal scores are ranked by frame index.
print(average_precision([0.5, 0.5], [0, 1]))

rng = np.random.default_rng(3)
targets = (rng.random((100, 4)) < 0.2).astype(float)
targets[:, 3] = 0  # no positives: reported as skipped
scores = np.clip(targets + 0.8 * rng.standard_normal(targets.shape), 0, 1)
report = per_frame_map(scores, targets, ["a", "b", "c", "d"])
print(report.to_json())
