"""
Which ingredients matter
========================

Trains one model per configuration row and seed, then compares MPJPE on
held-out scenes.  The full run (all eight rows, five seeds, 1000 steps)
takes a while on one core; the arguments shrink it:

    python 06_ablation.py [steps] [seeds] [rows...]
"""

import sys

from comhr.harness import TrainConfig
from comhr.harness.ablation import ABLATION_PROTOCOL, ABLATION_ROWS, run_ablation, synthetic_split

p = ABLATION_PROTOCOL
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
seeds = range(int(sys.argv[2]) if len(sys.argv) > 2 else 2)
names = sys.argv[3:] or ["rgb-only", "+tz", "+contrastive"]

rows = [r for r in ABLATION_ROWS if r.name in names]
train_scenes, val_scenes = synthetic_split(p["n_train"], p["n_val"], p["persons"], p["data_seed"])
table = run_ablation(TrainConfig.from_dict(p["config"]), rows, seeds=seeds,
                     train_scenes=train_scenes, val_scenes=val_scenes, steps=steps)
print(table)
