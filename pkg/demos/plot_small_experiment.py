"""
A small active-learning comparison
==================================

Three strategies, two seeds and three query rounds on a small synthetic
dataset, written to a run directory that ``palearn diagnose`` can read.
Takes a few minutes on one CPU.
"""

import sys
import tempfile

from palearn.cli import main
from palearn.simulate import ExperimentPlan, run_active_learning, summarize

###############################################################################
# The plan
# --------
# The same dictionary could be saved as JSON and passed to ``palearn run``.

plan = ExperimentPlan.from_dict({
    "dataset": {"synthetic": {"class_count": 4, "samples_per_class": 200, "image_size": 16}},
    "seeds": [0, 1],
    "round_count": 3,
    "strategies": [
        {"kind": "pal", "hyperparameters": {"epochs_main": 30, "epochs_finetune": 5}},
        {"kind": "random", "hyperparameters": {"epochs_main": 30}},
        {"kind": "entropy", "hyperparameters": {"epochs_main": 30}},
    ],
})

out = tempfile.mkdtemp(prefix="palearn_demo_")
results = run_active_learning(plan, out)

###############################################################################
# Learning curves
# ---------------
# Mean and standard deviation of test accuracy over seeds, per round.

for (name, rnd), (mean, std) in summarize(results).items():
    print(f"{name:8s} round {rnd}: {mean:.3f} +/- {std:.3f}")

###############################################################################
# Diagnostics
# -----------
# The report holds per-round correlations for the PAL runs plus the
# overshadowing and mixing-weight tables.

sys.exit(main(["diagnose", out]))
