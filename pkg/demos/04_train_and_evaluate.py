"""
Training, evaluation and robustness
===================================

A short training run on synthetic scenes followed by evaluation on unseen
scenes and the four observation corruptions.  Pass a step count as the
first argument for a longer run.
"""

import sys

from comhr.harness import TrainConfig, evaluate, train
from comhr.harness.ablation import synthetic_split
from comhr.harness.robustness import format_rows, run_robustness
from comhr.harness.train import loss_curves
from comhr.model import CoMHR

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
train_scenes, val_scenes = synthetic_split(64, 8, persons=6, data_seed=42)

cfg = TrainConfig(optimizer="adam", lr=1e-3, batch_scenes=2, restart_period=10**6, lambdas=(1, 1, 10, 0.1))
model = CoMHR(cfg.model)
print(f"before training: {evaluate(model, val_scenes).mpjpe_mm:.1f} mm")

logs = train(model, train_scenes, cfg, steps=steps)
curves = loss_curves(logs)
for k in ("reproj", "smpl", "joint", "contrastive", "total"):
    print(f"{k:>12}: {curves[k][0]:9.4f} -> {curves[k][-1]:9.4f}")

report = evaluate(model, val_scenes)
print(f"after {steps} steps: MPJPE {report.mpjpe_mm:.1f} mm, depth ordering {report.depth_order_acc:.1%} "
      f"over {report.n_pairs} pairs")

print(format_rows(run_robustness(model, val_scenes)))
