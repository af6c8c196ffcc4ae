"""Final fusion, parameter heads, desk skeleton and the regression losses.

The body model is a 24-joint rigid kinematic tree using the SMPL joint order
(pelvis root, hips at indices 1 and 2).  Shape coefficients scale bone
lengths linearly: ``length_k * (1 + 0.1 * (beta @ SHAPE_BLEND)_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .nn import MLP, Linear, Module

N_JOINTS = 24
N_SHAPE = 10
BOX_EMBED_DIM = 32
PELVIS, L_HIP, R_HIP = 0, 1, 2

JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
)
PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]
)
# parent -> child bone vectors in metres, y up, +x towards the body's left
BASE_OFFSETS = np.array([
    [0.00, 0.00, 0.00],
    [0.06, -0.09, 0.00], [-0.06, -0.09, 0.00], [0.00, 0.11, -0.02],
    [0.04, -0.38, 0.00], [-0.04, -0.38, 0.00], [0.00, 0.13, 0.00],
    [-0.01, -0.40, -0.04], [0.01, -0.40, -0.04], [0.00, 0.05, 0.02],
    [0.04, -0.06, 0.12], [-0.04, -0.06, 0.12], [0.00, 0.21, -0.03],
    [0.08, 0.12, -0.02], [-0.08, 0.12, -0.02], [0.00, 0.09, 0.05],
    [0.12, 0.04, -0.01], [-0.12, 0.04, -0.01], [0.26, -0.01, -0.02],
    [-0.26, -0.01, -0.02], [0.25, 0.01, 0.00], [-0.25, 0.01, 0.00],
    [0.08, -0.01, -0.01], [-0.08, -0.01, -0.01],
])


def _shape_blend():
    b = np.zeros((N_SHAPE, N_JOINTS))
    b[0, 1:] = 1.0                        # overall size
    b[1, [4, 5, 7, 8]] = 1.0              # leg length
    b[2, [18, 19, 20, 21]] = 1.0          # arm length
    b[3, [3, 6, 9, 12]] = 1.0             # torso length
    b[4, [13, 14, 16, 17]] = 1.0          # shoulder width
    b[5, [1, 2]] = 1.0                    # hip width
    b[6, [4, 7, 16, 18, 20]] = 0.5        # left/right asymmetry
    b[6, [5, 8, 17, 19, 21]] = -0.5
    b[7, [4, 5]], b[7, [7, 8]] = 0.5, -0.5        # thigh vs shin
    b[8, [18, 19]], b[8, [20, 21]] = 0.5, -0.5    # upper arm vs forearm
    b[9, [10, 11, 15, 22, 23]] = 1.0      # head and extremities
    return b


# column abs-sums are <= 3, so bone scales stay positive for |beta|_inf <= 3
SHAPE_BLEND = _shape_blend()


@dataclass(frozen=True)
class DeskSkeleton:
    parents: np.ndarray = PARENTS
    base_offsets: np.ndarray = BASE_OFFSETS
    shape_blend: np.ndarray = SHAPE_BLEND

    def bone_scale(self, beta):
        return 1.0 + 0.1 * np.asarray(beta) @ self.shape_blend


SKELETON = DeskSkeleton()


@dataclass
class ParamPrediction:
    pose6d: dc.Tensor   # (N, 24, 6)
    shape: dc.Tensor    # (N, 10)
    camera: dc.Tensor   # (N, 3): scale, t_x, t_y


# ---------------------------------------------------------------------------
# rotations

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
_DEGENERATE = 1e-8


def rot6d_to_matrix(r):
    """Gram-Schmidt a single 6-vector into a rotation matrix.

    Returns ``(R, degenerate)``.  A zero first half or collinear halves give
    the identity with ``degenerate=True``.
    """
    r = np.asarray(r, dtype=np.float64)
    a, b = r[:3], r[3:6]
    na = np.linalg.norm(a)
    if na < _DEGENERATE:
        return np.eye(3), True
    a1 = a / na
    perp = b - (a1 @ b) * a1
    npp = np.linalg.norm(perp)
    if npp < _DEGENERATE:
        return np.eye(3), True
    a2 = perp / npp
    return np.stack([a1, a2, np.cross(a1, a2)], axis=1), False


def matrix_to_rot6d(R):
    """First two columns of ``R`` flattened to (..., 6)."""
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_rotmat(r6):
    """Batched, differentiable form of :func:`rot6d_to_matrix` for (..., 6)."""
    r6 = dc.as_tensor(r6)
    a = r6[..., 0:3]
    b = r6[..., 3:6]
    a1 = dc.l2normalize(a)
    perp = b - dc.sum_(a1 * b, axis=-1, keepdims=True) * a1
    a2 = dc.l2normalize(perp)
    a3 = dc.cross(a1, a2)
    R = dc.stack([a1, a2, a3], axis=-1)
    bad = (np.linalg.norm(a.data, axis=-1) < _DEGENERATE) | (np.linalg.norm(perp.data, axis=-1) < _DEGENERATE)
    if bad.any():
        R = dc.where(bad[..., None, None], np.broadcast_to(np.eye(3), R.shape), R)
    return R


# ---------------------------------------------------------------------------
# kinematics and camera


def forward_kinematics(rotmats, shape, skeleton=SKELETON):
    """Joint positions (N, 24, 3) with the root at the origin.

    ``rotmats`` holds local joint rotations (N, 24, 3, 3); ``shape`` is (N, 10).
    """
    rotmats, shape = dc.as_tensor(rotmats), dc.as_tensor(shape)
    n = rotmats.shape[0]
    scale = 1.0 + 0.1 * dc.matmul(shape, dc.Tensor(skeleton.shape_blend))      # (N, 24)
    offsets = dc.reshape(scale, (n, N_JOINTS, 1)) * skeleton.base_offsets          # (N, 24, 3)
    glob = [None] * N_JOINTS
    pos = [None] * N_JOINTS
    glob[0] = rotmats[:, 0]
    pos[0] = dc.Tensor(np.zeros((n, 3)))
    for k in range(1, N_JOINTS):
        p = skeleton.parents[k]
        glob[k] = dc.matmul(glob[p], rotmats[:, k])
        bone = dc.matmul(glob[p], dc.reshape(offsets[:, k], (n, 3, 1)))
        pos[k] = pos[p] + dc.reshape(bone, (n, 3))
    return dc.stack(pos, axis=1)


def forward_kinematics_np(rotmats, shape, skeleton=SKELETON):
    with dc.no_grad():
        return forward_kinematics(rotmats, shape, skeleton).data


def project(joints3d, camera):
    """Weak perspective: ``(x, y) = s * (X, Y) + (t_x, t_y)``."""
    joints3d, camera = dc.as_tensor(joints3d), dc.as_tensor(camera)
    n = joints3d.shape[0]
    s = dc.reshape(camera[:, 0], (n, 1, 1))
    t = dc.reshape(camera[:, 1:3], (n, 1, 2))
    return joints3d[..., 0:2] * s + t


# ---------------------------------------------------------------------------
# fusion and heads


def box_raw(bbox, focal, center=(0.0, 0.0)):
    """CLIFF-style box encoding ``((c_x - p_x)/f, (c_y - p_y)/f, s/f)``."""
    bbox = np.asarray(bbox, dtype=np.float64)
    if focal <= 0:
        raise ValueError("focal must be positive")
    out = bbox.copy()
    out[..., 0] -= center[0]
    out[..., 1] -= center[1]
    return out / focal


def fuse_final(refined, box_embedding):
    """``[h_rgb | h_depth | h_pose | phi_box(b)]`` per person."""
    parts = [refined.rgb, refined.depth, refined.pose, box_embedding]
    n = parts[0].shape[0]
    for t in parts[1:]:
        if t.shape[0] != n:
            raise dc.ShapeError("fuse_final", parts[0].shape, t.shape)
    return dc.concat(parts, axis=1)


class RegressorHeads(Module):
    """Shared two-layer trunk followed by pose, shape and camera heads."""

    def __init__(self, n_in, hidden, rng, zero_heads=False, init_scale=0.5):
        self.trunk = MLP("head.trunk", n_in, hidden, hidden, rng)
        self.pose = Linear("head.pose", hidden, N_JOINTS * 6, rng, gain=0.01, zero=zero_heads)
        self.shape = Linear("head.shape", hidden, N_SHAPE, rng, gain=0.01, zero=zero_heads)
        self.camera = Linear("head.camera", hidden, 3, rng, gain=0.01, zero=zero_heads)
        if not zero_heads:
            self.pose.bias.data[:] = np.tile(IDENTITY_6D, N_JOINTS)
            self.camera.bias.data[:] = [init_scale, 0.0, 0.0]

    def __call__(self, v_final):
        z = dc.relu(self.trunk(v_final))
        n = z.shape[0]
        return ParamPrediction(
            pose6d=dc.reshape(self.pose(z), (n, N_JOINTS, 6)),
            shape=self.shape(z),
            camera=self.camera(z),
        )


def regress(v_final, heads):
    return heads(v_final)


class BoxEmbedding(Module):
    def __init__(self, rng, width=BOX_EMBED_DIM):
        self.lin = Linear("box", 3, width, rng)

    def __call__(self, raw):
        return self.lin(raw)


# ---------------------------------------------------------------------------
# losses


@dataclass
class RegressionTargets:
    joints2d: np.ndarray     # (N, 24, 2) box-normalised observed keypoints
    visible: np.ndarray      # (N, 24) bool
    pose6d: np.ndarray       # (N, 24, 6)
    shape: np.ndarray        # (N, 10)
    joints3d: np.ndarray     # (N, 24, 3)


def reprojection_loss(pred2d, target2d, visible):
    """Mean squared 2D distance over visible joints only."""
    pred2d = dc.as_tensor(pred2d)
    vis = np.asarray(visible, dtype=np.float64)
    count = vis.sum()
    # invisible targets are masked out before they enter the graph
    tgt = np.where(vis[..., None] > 0, target2d, 0.0)
    d = pred2d - tgt
    per_joint = dc.sum_(d * d, axis=-1) * vis
    return dc.sum_(per_joint) * (1.0 / count if count > 0 else 0.0)


def smpl_loss(pred, pose6d, shape):
    return dc.mse(pred.pose6d, pose6d) + dc.mse(pred.shape, shape)


def joint_loss(joints3d, target3d):
    """Mean squared 3D joint distance after subtracting each root."""
    joints3d = dc.as_tensor(joints3d)
    n = joints3d.shape[0]
    rel = joints3d - dc.reshape(joints3d[:, PELVIS], (n, 1, 3))
    tgt = target3d - target3d[:, PELVIS:PELVIS + 1]
    d = rel - tgt
    return dc.mean(dc.sum_(d * d, axis=-1))


def total_loss(pred, joints3d, targets, lambdas=(1.0, 1.0, 1.0, 1.0), contrastive=0.0):
    """Weighted regression + contrastive objective.

    Returns ``(total, components)`` where components maps each term name to
    its unweighted scalar tensor.
    """
    l1, l2, l3, l4 = lambdas
    comps = {
        "reproj": reprojection_loss(project(joints3d, pred.camera), targets.joints2d, targets.visible),
        "smpl": smpl_loss(pred, targets.pose6d, targets.shape),
        "joint": joint_loss(joints3d, targets.joints3d),
        "contrastive": dc.as_tensor(contrastive),
    }
    total = comps["reproj"] * l1 + comps["smpl"] * l2 + comps["joint"] * l3 + comps["contrastive"] * l4
    return total, comps
