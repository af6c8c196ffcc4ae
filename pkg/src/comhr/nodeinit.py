"""Per-person node features: visual, geometric and pose embeddings.

The three modality branches use disjoint weights and disjoint inputs:

* visual   <- rgb patch (or an ingested feature) and the pelvis-depth anchor
* geometric <- depth patch
* pose     <- 2D joints lifted with depth sampled from the depth patch

so a change to the pelvis-depth anchor can only move ``h_rgb``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ShapeError
from .nn import MLP, Conv1d, Module
from .regressor import N_JOINTS

L_HIP, R_HIP = 1, 2
MODALITIES = ("rgb", "depth", "pose")


@dataclass
class EncoderConfig:
    patch_size: int = 32
    feature_dim: int = 128          # raw width per modality (2048 at paper scale)
    latent_dim: int = 64            # D (256 at paper scale)
    hidden_dim: int = 128
    visibility_threshold: float = 0.5
    pose_conv_channels: tuple = (32, 64)
    anchor_width: int = 3           # 3: [T_z, c_x/f, c_y/f]; 1: [T_z]
    ingest: bool = False            # rgb input is a precomputed feature_dim vector
    depth_sampling: str = "nearest"
    joint_projection: bool = False  # extra LayerNorm + projection of the fused raw vector
    joint_identity: bool = True     # append a one-hot joint index to each joint's (x, y, z)

    def __post_init__(self):
        self.pose_conv_channels = tuple(int(c) for c in self.pose_conv_channels)
        dims = (self.patch_size, self.feature_dim, self.latent_dim, self.hidden_dim) + self.pose_conv_channels
        if any(d <= 0 for d in dims):
            raise ValueError("all encoder dims must be positive")
        if not 0.0 < self.visibility_threshold < 1.0:
            raise ValueError("visibility_threshold must lie in (0, 1)")
        if self.anchor_width not in (1, 3):
            raise ValueError("anchor_width must be 1 or 3")
        if self.depth_sampling not in ("nearest", "bilinear"):
            raise ValueError("depth_sampling must be 'nearest' or 'bilinear'")

    @property
    def fused_raw_width(self):
        return 3 * self.feature_dim + self.anchor_width


# ---------------------------------------------------------------------------
# observation batch


@dataclass
class Observations:
    """Stacked per-person inputs for one forward group."""

    joints2d: np.ndarray        # (N, 24, 3)
    depth: np.ndarray           # (N, P, P)
    bbox: np.ndarray            # (N, 3)
    rgb: np.ndarray             # (N, 3P^2) flattened patch or (N, F) feature
    tz_bias: np.ndarray         # (N,)
    focal: float
    center: tuple
    gt_joints3d: np.ndarray | None = None
    gt_pose6d: np.ndarray | None = None
    gt_shape: np.ndarray | None = None
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.bbox)


def observations(scene, indices=None, ingest=False):
    persons = scene.persons if indices is None else [scene.persons[i] for i in indices]

    def stack(name):
        vals = [getattr(p, name) for p in persons]
        return None if any(v is None for v in vals) else np.stack(vals).astype(np.float64)

    if ingest:
        rgb = stack("rgb_feature")
        if rgb is None:
            raise ShapeError("observations", (0,), (len(persons),))
    else:
        rgb = np.stack([p.rgb_patch.reshape(-1) for p in persons]).astype(np.float64)
    return Observations(
        joints2d=stack("joints2d"),
        depth=stack("depth_patch"),
        bbox=stack("bbox"),
        rgb=rgb,
        tz_bias=np.array([p.tz_bias for p in persons], dtype=np.float64),
        focal=float(scene.focal),
        center=scene.center,
        gt_joints3d=stack("gt_joints3d"),
        gt_pose6d=stack("gt_pose6d"),
        gt_shape=stack("gt_shape"),
        ids=[p.id for p in persons],
    )


def box_normalized(joints2d, bbox):
    """Keypoints in box units: (x - c_x) / s, (y - c_y) / s."""
    joints2d, bbox = np.asarray(joints2d), np.asarray(bbox)
    return (joints2d[..., :2] - bbox[..., None, :2]) / bbox[..., None, 2:3]


# ---------------------------------------------------------------------------
# depth sampling and the pelvis anchor


def visibility_mask(joints2d, tau_vis=0.5):
    return np.asarray(joints2d)[..., 2] > tau_vis


def sample_depth(joints2d, depth_patch, bbox, mode="nearest"):
    """Depth (N, K) at each joint's patch location, clamped to the border."""
    joints2d, depth_patch = np.asarray(joints2d), np.asarray(depth_patch)
    n, p, _ = depth_patch.shape
    uv = box_normalized(joints2d, bbox) + 0.5          # [0, 1] inside the box
    rows = np.arange(n)[:, None]
    if mode == "nearest":
        col = np.clip(np.floor(uv[..., 0] * p), 0, p - 1).astype(int)
        row = np.clip(np.floor(uv[..., 1] * p), 0, p - 1).astype(int)
        return depth_patch[rows, row, col]
    fx = np.clip(uv[..., 0] * p - 0.5, 0, p - 1)
    fy = np.clip(uv[..., 1] * p - 0.5, 0, p - 1)
    x0, y0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
    x1, y1 = np.minimum(x0 + 1, p - 1), np.minimum(y0 + 1, p - 1)
    ax, ay = fx - x0, fy - y0
    top = depth_patch[rows, y0, x0] * (1 - ax) + depth_patch[rows, y0, x1] * ax
    bot = depth_patch[rows, y1, x0] * (1 - ax) + depth_patch[rows, y1, x1] * ax
    return top * (1 - ay) + bot * ay


def pelvis_depth(joints2d, depth_patch, bbox, tau_vis=0.5, mode="nearest"):
    """Pelvis depth T_z per person and a degraded flag.

    Both hips visible: their mean.  One hip: that hip.  No hip: mean depth of
    the visible joints.  Nothing visible: 0 and ``degraded=True``.
    """
    z = sample_depth(joints2d, depth_patch, bbox, mode)
    m = visibility_mask(joints2d, tau_vis)
    hips = m[:, [L_HIP, R_HIP]]
    n_hips = hips.sum(1)
    hip_mean = (z[:, [L_HIP, R_HIP]] * hips).sum(1) / np.maximum(n_hips, 1)
    n_vis = m.sum(1)
    all_mean = (z * m).sum(1) / np.maximum(n_vis, 1)
    tz = np.where(n_hips > 0, hip_mean, all_mean)
    degraded = n_vis == 0
    return np.where(degraded, 0.0, tz), degraded


# ---------------------------------------------------------------------------
# encoders


class PoseEncoder(Module):
    """1-D convolutions over the joint sequence, then visibility-masked mean pooling."""

    def __init__(self, name, channels, feature_dim, rng, in_channels=3):
        widths = (in_channels,) + tuple(channels) + (feature_dim,)
        self.convs = [Conv1d(f"{name}.conv{i}", a, b, rng) for i, (a, b) in enumerate(zip(widths, widths[1:]))]

    def features(self, points):
        x = dc.as_tensor(points)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = dc.relu(x)
        return x


def masked_pool(features, mask):
    """Mean of per-joint features (N, K, C) over joints with mask 1."""
    return dc.masked_mean(features, np.asarray(mask, dtype=np.float64)[..., None], axis=1)


class NodeInit(Module):
    """All weights of the node-initialisation stage."""

    def __init__(self, config, rng):
        c = config
        p2 = c.patch_size * c.patch_size
        self.config = c
        self.enc_rgb = MLP("enc.rgb", 3 * p2, c.hidden_dim, c.feature_dim, rng)
        self.enc_depth = MLP("enc.depth", p2, c.hidden_dim, c.feature_dim, rng)
        n_in = 3 + (N_JOINTS if c.joint_identity else 0)
        self.enc_pose = PoseEncoder("enc.pose", c.pose_conv_channels, c.feature_dim, rng, n_in)
        self.mlp_rgb = MLP("embed.rgb", c.feature_dim + c.anchor_width, c.hidden_dim, c.latent_dim, rng)
        self.mlp_depth = MLP("embed.depth", c.feature_dim, c.hidden_dim, c.latent_dim, rng)
        self.mlp_pose = MLP("embed.pose", c.feature_dim, c.hidden_dim, c.latent_dim, rng)


def encode_visual(weights, x, ingest=False):
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(len(x), -1)
    c = weights.config
    if ingest:
        if x.shape[1] != c.feature_dim:
            raise ShapeError("encode_visual", x.shape, (len(x), c.feature_dim))
        return dc.Tensor(x)
    want = 3 * c.patch_size ** 2
    if x.shape[1] != want:
        raise ShapeError("encode_visual", x.shape, (len(x), want))
    return weights.enc_rgb(x)


def encode_geometric(weights, depth_patch):
    d = np.asarray(depth_patch, dtype=np.float64)
    d = d.reshape(len(d), -1)
    want = weights.config.patch_size ** 2
    if d.shape[1] != want:
        raise ShapeError("encode_geometric", d.shape, (len(d), want))
    return weights.enc_depth(d)


def encode_pose(weights, joints2d, depth_patch, bbox, tau_vis=None):
    """Returns ``(feature, degraded)``; persons with no visible joint get zeros."""
    c = weights.config
    tau = c.visibility_threshold if tau_vis is None else tau_vis
    joints2d = np.asarray(joints2d, dtype=np.float64)
    m = visibility_mask(joints2d, tau)
    z = sample_depth(joints2d, depth_patch, bbox, c.depth_sampling)
    pts = np.concatenate([box_normalized(joints2d, bbox), z[..., None]], axis=-1) * m[..., None]
    if c.joint_identity:
        onehot = np.broadcast_to(np.eye(pts.shape[1]), (len(pts),) + (pts.shape[1],) * 2)
        pts = np.concatenate([pts, onehot], axis=-1)
    feats = weights.enc_pose.features(pts)
    return masked_pool(feats, m), ~m.any(axis=1)


@dataclass
class ModalEmbeddings:
    h_rgb: dc.Tensor
    h_depth: dc.Tensor
    h_pose: dc.Tensor
    h_agg: dc.Tensor
    tz: np.ndarray
    raw: dict = field(default_factory=dict)
    degraded: np.ndarray | None = None

    def by_modality(self):
        return {"rgb": self.h_rgb, "depth": self.h_depth, "pose": self.h_pose}


def anchor_slot(tz, bbox, focal, center, width=3):
    tz = np.asarray(tz, dtype=np.float64)[:, None]
    if width == 1:
        return tz
    pos = (np.asarray(bbox)[:, :2] - np.asarray(center)) / focal
    return np.concatenate([tz, pos], axis=1)


def build_embeddings(obs, weights, config=None, *, modalities=MODALITIES, use_tz=True, tz=None):
    """Modality embeddings and their concatenation ``h_agg`` for one group.

    Disabled modalities contribute constant zero embeddings.  ``tz`` overrides
    the pelvis depth computed from the observations (bias still applies).
    """
    c = config or weights.config
    n = len(obs)
    degraded = np.zeros(n, dtype=bool)
    if tz is None:
        tz, degraded = pelvis_depth(obs.joints2d, obs.depth, obs.bbox, c.visibility_threshold, c.depth_sampling)
    tz = np.asarray(tz, dtype=np.float64) + obs.tz_bias
    zeros = dc.Tensor(np.zeros((n, c.latent_dim)))
    raw = {}
    if "rgb" in modalities:
        raw["rgb"] = encode_visual(weights, obs.rgb, c.ingest)
        anchor = anchor_slot(tz, obs.bbox, obs.focal, obs.center, c.anchor_width)
        if not use_tz:
            anchor = np.zeros_like(anchor)
        raw["anchor"] = anchor
        h_rgb = weights.mlp_rgb(dc.concat([raw["rgb"], dc.Tensor(anchor)], axis=1))
    else:
        h_rgb = zeros
    if "depth" in modalities:
        raw["depth"] = encode_geometric(weights, obs.depth)
        h_depth = weights.mlp_depth(raw["depth"])
    else:
        h_depth = zeros
    if "pose" in modalities:
        raw["pose"], pose_degraded = encode_pose(weights, obs.joints2d, obs.depth, obs.bbox, c.visibility_threshold)
        degraded = degraded | pose_degraded
        h_pose = weights.mlp_pose(raw["pose"])
    else:
        h_pose = zeros
    return ModalEmbeddings(
        h_rgb=h_rgb, h_depth=h_depth, h_pose=h_pose,
        h_agg=dc.concat([h_rgb, h_depth, h_pose], axis=1),
        tz=tz, raw=raw, degraded=degraded,
    )
