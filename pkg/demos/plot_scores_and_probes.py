"""
Confusion scores by hand
========================

The three per-sample scores, what they look like on a few hand-made
probability tables, and why a KL term can drown out the rotation score
while an entropy term cannot.
"""

import math

import numpy as np

from palearn import scoring
from palearn.diagnostics import StandardizedScoreTriple, optimal_alpha, overshadow_probe

###############################################################################
# Rotation confusion
# ------------------
# Row i of the table is the rotation head's output for the image rotated by
# 90*i degrees. A network that recognises every rotation scores -4; one
# that guesses uniformly scores -1.

print(scoring.ssl_confusion_score(np.eye(4)))           # -4.0
print(scoring.ssl_confusion_score(np.full((4, 4), 0.25)))  # -1.0

###############################################################################
# Classification confusion
# ------------------------
# The class score is minus the KL divergence from the uniform distribution,
# so a flat prediction scores 0 and a confident one scores far below it.

for h in ([0.5, 0.5], [0.9, 0.1], [1 - 1e-6, 1e-6]):
    print(h, round(scoring.classification_confusion_score(h), 4))

###############################################################################
# Overshadowing
# -------------
# Push a binary prediction towards certainty. The hybrid score keeps falling
# by about ln(10)/2 per decade, while the entropy variant stays within ln 2
# of the rotation score.

for k, hybrid, ent in overshadow_probe(lambda1=1.0):
    print(f"k={k:2d}  hybrid={hybrid:8.4f}  entropy variant={ent:8.5f}")
print("ln(10)/2 =", math.log(10) / 2)

###############################################################################
# Mixing two noisy proxies
# ------------------------
# If the rotation and class scores correlate 0.3 and 0.4 with the true
# informativeness, the best mixing weight is 0.3 / 0.5 = 0.6 and the mix
# correlates 0.5, better than either score alone.

res = optimal_alpha(StandardizedScoreTriple(0.3, 0.4, 0.2))
print(res)
