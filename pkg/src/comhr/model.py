"""End-to-end network: node init -> shared topology -> reasoning -> heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .contrast import ContrastConfig, contrastive_loss, positive_sets
from .hyperreason import BranchWeights, reason
from .hypertopo import DEFAULT_K, Hypergraph, build_topology
from .nn import Linear, Module
from .nodeinit import MODALITIES, EncoderConfig, NodeInit, build_embeddings
from .regressor import (
    BoxEmbedding,
    RegressionTargets,
    RegressorHeads,
    box_raw,
    forward_kinematics,
    fuse_final,
    rot6d_to_rotmat,
    total_loss,
)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    K: int = DEFAULT_K
    rounds: int = 1
    normalize: bool = False
    residual: bool = False
    head_hidden: int = 128
    modalities: tuple = MODALITIES
    use_tz: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.modalities = tuple(m for m in MODALITIES if m in self.modalities)
        if not self.modalities:
            raise ValueError("at least one modality must be enabled")
        if self.K < 1 or self.rounds < 1:
            raise ValueError("K and rounds must be >= 1")


@dataclass
class ForwardResult:
    embeddings: object
    topology: object
    refined: object
    v_final: dc.Tensor
    pred: object
    joints3d: dc.Tensor


class CoMHR(Module):
    def __init__(self, config=None):
        self.config = config or ModelConfig()
        c = self.config
        rng = np.random.default_rng(c.seed)
        d = c.encoder.latent_dim
        self.nodeinit = NodeInit(c.encoder, rng)
        self.branches = BranchWeights(d, rng, c.K)
        self.box = BoxEmbedding(rng)
        width = 3 * d + self.box.lin.n_out
        self.joint_proj = None
        if c.encoder.joint_projection:
            self.joint_proj = Linear("embed.joint", c.encoder.fused_raw_width, d, rng)
            width += d
        self.heads = RegressorHeads(width, c.head_hidden, rng)

    def state(self):
        return {p.name: p for p in self.parameters()}

    def forward(self, obs, H=None, tz=None):
        """Run one group; pass ``H`` to freeze the topology."""
        c = self.config
        emb = build_embeddings(obs, self.nodeinit, c.encoder, modalities=c.modalities, use_tz=c.use_tz, tz=tz)
        if H is None:
            topo = build_topology(emb.h_agg, c.K)
        else:
            H = np.asarray(H, dtype=np.float64)
            topo = Hypergraph(A=None, neighbors=[np.flatnonzero(col) for col in H.T], H=H, K=int(H[:, 0].sum()))
        refined = reason(emb, topo.H, self.branches, c.rounds, c.normalize, c.residual)
        box = self.box(box_raw(obs.bbox, obs.focal, obs.center))
        v = fuse_final(refined, box)
        if self.joint_proj is not None:
            v = dc.concat([v, self.joint_proj(dc.layernorm(_fused_raw(emb, len(obs), c.encoder)))], axis=1)
        pred = self.heads(v)
        joints = forward_kinematics(rot6d_to_rotmat(pred.pose6d), pred.shape)
        return ForwardResult(emb, topo, refined, v, pred, joints)

    __call__ = forward

    def loss(self, obs, lambdas=(1.0, 1.0, 1.0, 1.0), contrast=None, H=None):
        """Total objective for one group; returns ``(total, components, result)``."""
        contrast = contrast or ContrastConfig()
        res = self.forward(obs, H=H)
        targets = targets_from(obs, self.config.encoder.visibility_threshold)
        if lambdas[3] != 0 and len(obs) >= 2:
            pos = positive_sets(obs.gt_joints3d, contrast.eps_mpjpe)
            con, parts = contrastive_loss(res.embeddings, pos, contrast, self.config.modalities)
        else:
            con, parts = dc.Tensor(0.0), {}
        total, comps = total_loss(res.pred, res.joints3d, targets, lambdas, con)
        comps.update(parts)
        return total, comps, res


def _fused_raw(emb, n, enc):
    parts = []
    for m in MODALITIES:
        parts.append(emb.raw.get(m, dc.Tensor(np.zeros((n, enc.feature_dim)))))
    parts.append(dc.Tensor(emb.raw.get("anchor", np.zeros((n, enc.anchor_width)))))
    return dc.concat(parts, axis=1)


def targets_from(obs, tau_vis=0.5):
    from .nodeinit import box_normalized

    return RegressionTargets(
        joints2d=box_normalized(obs.joints2d, obs.bbox),
        visible=obs.joints2d[..., 2] > tau_vis,
        pose6d=obs.gt_pose6d,
        shape=obs.gt_shape,
        joints3d=obs.gt_joints3d,
    )


def predicted_depth(camera, bbox, focal):
    """Metric-free depth implied by the weak-perspective scale: f / (s_c * s_box)."""
    s = np.asarray(camera)[:, 0] * np.asarray(bbox)[:, 2]
    with np.errstate(divide="ignore"):
        return np.where(s > 0, focal / np.where(s > 0, s, 1.0), np.inf)
