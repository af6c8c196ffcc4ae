"""Dual contrastive objective over modality embeddings.

Intra-modal: persons whose ground-truth poses are close (root-aligned MPJPE
below a threshold) are positives.  Following the masked-NCE pseudocode, the
softmax denominator ranges over the positives only, and the loss is averaged
over anchors that have at least one positive.

Cross-modal: a hinge on the negative mean pairwise cosine between a person's
three modality embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


@dataclass
class ContrastConfig:
    tau_temp: float = 0.07
    alpha: float = 0.03
    eps_mpjpe: float = 0.15
    reduction: str = "mean"            # "mean" over contributing anchors, or "sum"
    denominator: str = "positives"     # "positives" or "all" (every j != i)

    def __post_init__(self):
        if self.tau_temp <= 0 or self.alpha < 0 or self.eps_mpjpe <= 0:
            raise ValueError("need tau_temp > 0, alpha >= 0, eps_mpjpe > 0")
        if self.reduction not in ("mean", "sum") or self.denominator not in ("positives", "all"):
            raise ValueError("bad reduction/denominator option")


@dataclass
class PositiveSets:
    sets: list                # sets[i] = sorted positive indices of anchor i
    distances: np.ndarray     # pairwise root-aligned MPJPE (metres)
    eps_mpjpe: float

    @property
    def mask(self):
        n = len(self.sets)
        m = np.zeros((n, n), dtype=bool)
        for i, s in enumerate(self.sets):
            m[i, s] = True
        return m

    @property
    def all_empty(self):
        return all(len(s) == 0 for s in self.sets)

    def restrict(self, keep):
        """Drop the persons where ``keep`` is False, both as anchors and as positives."""
        keep = np.asarray(keep, dtype=bool)
        sets = [s[keep[s]] if keep[i] else s[:0] for i, s in enumerate(self.sets)]
        return PositiveSets(sets=sets, distances=self.distances, eps_mpjpe=self.eps_mpjpe)


def pairwise_mpjpe(joints3d):
    j = np.asarray(joints3d, dtype=np.float64)
    rel = j - j[:, :1]
    diff = rel[:, None] - rel[None, :]
    return np.linalg.norm(diff, axis=-1).mean(-1)


def positive_sets(gt_joints3d, eps_mpjpe=0.15):
    D = pairwise_mpjpe(gt_joints3d)
    return sets_from_distances(D, eps_mpjpe)


def sets_from_distances(D, eps_mpjpe):
    D = np.asarray(D)
    n = len(D)
    sets = [np.flatnonzero((D[i] < eps_mpjpe) & (np.arange(n) != i)) for i in range(n)]
    return PositiveSets(sets=sets, distances=D, eps_mpjpe=eps_mpjpe)


def similarity_logits(h, tau_temp):
    u = dc.l2normalize(h, axis=1)
    return dc.matmul(u, dc.transpose(u)) * (1.0 / tau_temp)


def intra_loss(h, positives, tau_temp=0.07, reduction="mean", denominator="positives"):
    """Masked NCE loss for one modality; 0 when no anchor has a positive."""
    h = dc.as_tensor(h)
    pos = positives.mask
    anchors = np.flatnonzero(pos.any(axis=1))
    if len(anchors) == 0:
        return dc.Tensor(0.0)
    S = dc.take(similarity_logits(h, tau_temp), anchors, axis=0)      # (A, N)
    pos_a = pos[anchors]
    if denominator == "positives":
        denom = pos_a
    else:
        denom = np.ones_like(pos_a)
        denom[np.arange(len(anchors)), anchors] = False
    # constant shift keeps exp() bounded; it cancels exactly in the loss
    shift = np.where(denom, S.data, -np.inf).max(axis=1, keepdims=True)
    lse = dc.log(dc.sum_(dc.exp(S - shift) * denom, axis=1)) + shift[:, 0]
    per_anchor = lse - dc.masked_mean(S, pos_a, axis=1)
    return dc.sum_(per_anchor) if reduction == "sum" else dc.mean(per_anchor)


def cross_loss(h_rgb, h_depth, h_pose, keep=None):
    """Hinge on the negative mean pairwise cosine, averaged over the kept persons."""
    mean_cos = (dc.cosine(h_rgb, h_depth) + dc.cosine(h_rgb, h_pose) + dc.cosine(h_depth, h_pose)) * (1.0 / 3.0)
    per_node = dc.relu(-mean_cos)
    if keep is None:
        return dc.mean(per_node)
    return dc.masked_mean(per_node, np.asarray(keep, dtype=float), axis=0)


def contrastive_total(intra_losses, cross, alpha=0.03):
    total = dc.as_tensor(cross) * alpha
    for loss in intra_losses:
        total = total + loss
    return total


def contrastive_loss(embeddings, positives, config, modalities=("rgb", "depth", "pose")):
    """Sum of intra losses over enabled modalities plus ``alpha`` x cross loss.

    Persons flagged ``degraded`` (no visible joint) have no pose observation;
    they are left out of the pose term and the cross term, since their pose
    embedding carries no direction to contrast.  Returns ``(total, parts)``.
    """
    hs = embeddings.by_modality()
    degraded = getattr(embeddings, "degraded", None)
    keep = None if degraded is None or not np.any(degraded) else ~np.asarray(degraded)
    parts = {}
    for m in modalities:
        pos = positives.restrict(keep) if keep is not None and m == "pose" else positives
        parts[f"intra_{m}"] = intra_loss(hs[m], pos, config.tau_temp, config.reduction, config.denominator)
    parts["cross"] = cross_loss(hs["rgb"], hs["depth"], hs["pose"], keep)
    total = contrastive_total([parts[f"intra_{m}"] for m in modalities], parts["cross"], config.alpha)
    return total, parts
