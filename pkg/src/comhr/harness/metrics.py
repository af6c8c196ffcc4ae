from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..model import predicted_depth
from ..nodeinit import observations
from .partition import partition_subgroups

MM_PER_UNIT = 1000.0   # one desk-skeleton unit is one metre


@dataclass
class MetricsReport:
    mpjpe_mm: float
    depth_order_acc: float
    n_persons: int
    n_pairs: int
    per_scene_mpjpe_mm: list = field(default_factory=list)
    loss_curves: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "depth_order_acc": self.depth_order_acc,
            "n_persons": self.n_persons,
            "n_pairs": self.n_pairs,
            "per_scene_mpjpe_mm": list(self.per_scene_mpjpe_mm),
        }


def per_joint_error(pred, gt):
    """Euclidean joint errors (N, 24) after subtracting each skeleton's root."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    return np.linalg.norm((pred - pred[:, :1]) - (gt - gt[:, :1]), axis=-1)


def mpjpe(pred, gt):
    return float(per_joint_error(pred, gt).mean())


def depth_order_counts(pred_depth, gt_depth):
    """(correct, total) over unordered pairs; equal predicted depths count as wrong."""
    p, g = np.asarray(pred_depth, dtype=float), np.asarray(gt_depth, dtype=float)
    i, j = np.triu_indices(len(p), k=1)
    dp, dg = np.sign(p[i] - p[j]), np.sign(g[i] - g[j])
    ok = (dp == dg) & (dp != 0)
    return int(ok.sum()), len(i)


def depth_order_accuracy(pred_depth, gt_depth):
    correct, total = depth_order_counts(pred_depth, gt_depth)
    return correct / total if total else float("nan")


def predict(model, scene, max_group=8):
    """Root-relative joints, implied depth and raw parameters for every person."""
    n = len(scene.persons)
    out = {
        "joints3d": np.zeros((n, 24, 3)),
        "depth": np.zeros(n),
        "pose6d": np.zeros((n, 24, 6)),
        "shape": np.zeros((n, 10)),
        "camera": np.zeros((n, 3)),
    }
    tau = model.config.encoder.visibility_threshold
    with dc.no_grad():
        for group in partition_subgroups(scene, max_group, tau):
            idx = list(group.indices)
            obs = observations(scene, idx, model.config.encoder.ingest)
            res = model.forward(obs)
            out["joints3d"][idx] = res.joints3d.data
            out["pose6d"][idx] = res.pred.pose6d.data
            out["shape"][idx] = res.pred.shape.data
            out["camera"][idx] = res.pred.camera.data
            out["depth"][idx] = predicted_depth(res.pred.camera.data, obs.bbox, obs.focal)
    return out


def evaluate(model, scenes, max_group=8):
    errs, per_scene, correct, pairs = [], [], 0, 0
    for scene in scenes:
        pred = predict(model, scene, max_group)
        gt = np.stack([p.gt_joints3d for p in scene.persons])
        e = per_joint_error(pred["joints3d"], gt)
        errs.append(e)
        per_scene.append(float(e.mean()) * MM_PER_UNIT)
        c, t = depth_order_counts(pred["depth"], gt[:, 0, 2])
        correct += c
        pairs += t
    allerr = np.concatenate(errs)
    return MetricsReport(
        mpjpe_mm=float(allerr.mean()) * MM_PER_UNIT,
        depth_order_acc=correct / pairs if pairs else float("nan"),
        n_persons=len(allerr),
        n_pairs=pairs,
        per_scene_mpjpe_mm=per_scene,
    )
