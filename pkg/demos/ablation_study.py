"""The five-row flag study on the default synthetic data.

Defaults match the acceptance run (5 seeds, 20 epochs, about 11 minutes on
one core).  Pass a smaller seed count for a quicker look:
    python demos/ablation_study.py 2
"""

import sys

import numpy as np

from gotreid.config import ExperimentConfig
from gotreid.experiment import ablation

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
cfg = ExperimentConfig().override({"train.total_epochs": 20, "train.decay_epochs": (7, 12)})


def show(row):
    r1 = np.array(row["rank1"])
    print(f"{row['row']:<12s} Rank-1 {r1.mean():.3f} ± {r1.std():.3f}   "
          f"mAP {row['map_mean']:.3f}", flush=True)


rows = ablation(cfg, seeds, on_row=show)
base = rows[0]["rank1_mean"]
print(f"\nGOT gain over baseline: {rows[1]['rank1_mean'] - base:+.3f}; "
      f"full model gain: {rows[-1]['rank1_mean'] - base:+.3f}")
