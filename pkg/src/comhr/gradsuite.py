"""Randomised gradcheck cases for every differentiable operation and loss.

Each case builder takes a numpy Generator and returns ``(fn, params)`` where
``fn(*params)`` is a scalar Tensor.  Non-scalar outputs are reduced with a
fixed random projection so every output element contributes to the check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .contrast import ContrastConfig, contrastive_loss, cross_loss, intra_loss, sets_from_distances
from .hyperreason import BranchWeights, edge_to_node, node_to_edge, reason
from .hypertopo import build_topology
from .model import CoMHR, ModelConfig
from .nn import MLP, Conv1d, Linear
from .nodeinit import EncoderConfig, masked_pool
from .regressor import (
    IDENTITY_6D,
    N_JOINTS,
    N_SHAPE,
    ParamPrediction,
    RegressionTargets,
    forward_kinematics,
    joint_loss,
    project,
    reprojection_loss,
    rot6d_to_rotmat,
    smpl_loss,
    total_loss,
)


# width of the embedding rows fed to the contrastive losses; entries ~ N(0, 1)
EMBED_DIM = 8


def _p(name, value):
    return dc.Parameter(name, np.array(value, dtype=np.float64))


def _projected(fn, rng):
    """Wrap a tensor-valued ``fn`` into a scalar via a fixed random weighting."""
    cache = {}

    def scalar(*params):
        out = fn(*params)
        if "w" not in cache:
            cache["w"] = rng.normal(size=out.shape)
        return dc.sum_(out * cache["w"])

    return scalar


def _shape(rng, lo=1, hi=4, ndim=2):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=ndim))


def _away_from_zero(rng, shape, lo=0.5, hi=2.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# ---------------------------------------------------------------------------
# primitive operations


def case_add(rng):
    s = _shape(rng)
    b_shape = s if rng.random() < 0.5 else (1, s[1])
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=b_shape))
    return _projected(dc.add, rng), [a, b]


def case_sub(rng):
    s = _shape(rng)
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=(s[1],)))
    return _projected(dc.sub, rng), [a, b]


def case_mul(rng):
    s = _shape(rng)
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=s))
    return _projected(dc.mul, rng), [a, b]


def case_div(rng):
    s = _shape(rng)
    a, b = _p("a", rng.normal(size=s)), _p("b", _away_from_zero(rng, s))
    return _projected(dc.div, rng), [a, b]


def case_relu(rng):
    x = _p("x", rng.normal(size=_shape(rng, 2, 5)))
    return _projected(dc.relu, rng), [x]


def case_exp(rng):
    x = _p("x", rng.uniform(-2.0, 2.0, size=_shape(rng)))
    return _projected(dc.exp, rng), [x]


def case_log(rng):
    x = _p("x", rng.uniform(0.5, 3.0, size=_shape(rng)))
    return _projected(dc.log, rng), [x]


def case_where(rng):
    s = _shape(rng)
    cond = rng.random(s) < 0.5
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=s))
    return _projected(lambda x, y: dc.where(cond, x, y), rng), [a, b]


def case_matmul(rng):
    n, k, m = _shape(rng, 1, 4, 3)
    if rng.random() < 0.5:
        a = _p("a", rng.normal(size=(2, n, k)))
    else:
        a = _p("a", rng.normal(size=(n, k)))
    b = _p("b", rng.normal(size=(k, m)))
    return _projected(dc.matmul, rng), [a, b]


def case_cross(rng):
    n = int(rng.integers(1, 4))
    a, b = _p("a", rng.normal(size=(n, 3))), _p("b", rng.normal(size=(n, 3)))
    return _projected(dc.cross, rng), [a, b]


def case_concat(rng):
    n = int(rng.integers(1, 4))
    a, b = _p("a", rng.normal(size=(n, 2))), _p("b", rng.normal(size=(n, 3)))
    return _projected(lambda x, y: dc.concat([x, y], axis=1), rng), [a, b]


def case_stack(rng):
    s = _shape(rng)
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=s))
    return _projected(lambda x, y: dc.stack([x, y], axis=-1), rng), [a, b]


def case_getitem(rng):
    x = _p("x", rng.normal(size=(4, 5)))
    idx = (slice(1, 3), np.array([0, 2, 2, 4]))
    return _projected(lambda t: t[idx], rng), [x]


def case_take(rng):
    x = _p("x", rng.normal(size=(3, 5)))
    idx = rng.integers(0, 5, size=6)
    return _projected(lambda t: dc.take(t, idx, axis=1), rng), [x]


def case_reshape(rng):
    x = _p("x", rng.normal(size=(2, 6)))
    return _projected(lambda t: dc.reshape(t, (3, 4)), rng), [x]


def case_transpose(rng):
    x = _p("x", rng.normal(size=(2, 3, 4)))
    return _projected(lambda t: dc.transpose(t, (2, 0, 1)), rng), [x]


def case_sum(rng):
    x = _p("x", rng.normal(size=_shape(rng, 1, 4, 3)))
    axis = int(rng.integers(0, 3))
    return _projected(lambda t: dc.sum_(t, axis=axis), rng), [x]


def case_mean(rng):
    x = _p("x", rng.normal(size=_shape(rng, 1, 4, 3)))
    axis = int(rng.integers(0, 3))
    return _projected(lambda t: dc.mean(t, axis=axis), rng), [x]


def case_masked_mean(rng):
    x = _p("x", rng.normal(size=(3, 5)))
    w = (rng.random((3, 5)) < 0.6) * rng.uniform(0.5, 2.0, size=(3, 5))
    return _projected(lambda t: dc.masked_mean(t, w, axis=1), rng), [x]


def case_mse(rng):
    s = _shape(rng)
    a, b = _p("a", rng.normal(size=s)), _p("b", rng.normal(size=s))
    return (lambda x, y: dc.mse(x, y)), [a, b]


def case_l2normalize(rng):
    x = _p("x", _away_from_zero(rng, _shape(rng, 1, 4)))
    return _projected(dc.l2normalize, rng), [x]


def case_cosine(rng):
    s = _shape(rng, 1, 4)
    a, b = _p("a", _away_from_zero(rng, s)), _p("b", _away_from_zero(rng, s))
    return _projected(dc.cosine, rng), [a, b]


def case_softmax(rng):
    x = _p("x", rng.normal(size=_shape(rng, 1, 4)))
    return _projected(dc.softmax, rng), [x]


def case_layernorm(rng):
    x = _p("x", rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(3, 8)))))
    return _projected(dc.layernorm, rng), [x]


# ---------------------------------------------------------------------------
# layers and model stages


def case_linear(rng):
    layer = Linear("lin", 3, 2, rng)
    layer.bias.data = rng.normal(size=2)
    x = _p("x", rng.normal(size=(2, 3)))
    return _projected(lambda t, w, b: layer(t), rng), [x, layer.weight, layer.bias]


def case_mlp(rng):
    net = MLP("mlp", 3, 4, 2, rng)
    for p in net.parameters():
        p.data = p.data + rng.normal(0.0, 0.1, size=p.shape)
    x = _p("x", rng.normal(size=(2, 3)))
    return _projected(lambda t, *_: net(t), rng), [x] + net.parameters()


def case_conv1d(rng):
    conv = Conv1d("conv", 2, 3, rng)
    x = _p("x", rng.normal(size=(2, 5, 2)))
    return _projected(lambda t, w: conv(t), rng), [x, conv.lin.weight]


def case_masked_pool(rng):
    f = _p("features", rng.normal(size=(2, 6, 3)))
    mask = rng.random((2, 6)) < 0.6
    mask[:, 0] = True
    return _projected(lambda t: masked_pool(t, mask), rng), [f]


def case_rot6d_to_rotmat(rng):
    r = _p("r6", IDENTITY_6D + rng.normal(0.0, 0.5, size=(int(rng.integers(1, 4)), 6)))
    return _projected(rot6d_to_rotmat, rng), [r]


def _selected_pose(rng, k=3):
    """Pose (1, 24, 6) whose first ``k`` random joints are free parameters."""
    joints = np.sort(rng.choice(N_JOINTS, size=k, replace=False))
    sel = np.zeros((N_JOINTS, k))
    sel[joints, np.arange(k)] = 1.0
    base = np.tile(IDENTITY_6D, (N_JOINTS, 1)) + rng.normal(0.0, 0.3, size=(N_JOINTS, 6))
    base[joints] = 0.0
    free = _p("pose6d", IDENTITY_6D + rng.normal(0.0, 0.3, size=(k, 6)))

    def pose(p):
        return dc.reshape(dc.matmul(dc.Tensor(sel), p) + base, (1, N_JOINTS, 6))

    return pose, free


def case_forward_kinematics(rng):
    pose, free = _selected_pose(rng)
    beta = _p("shape", rng.normal(0.0, 1.0, size=(1, N_SHAPE)))
    return _projected(lambda p, b: forward_kinematics(rot6d_to_rotmat(pose(p)), b), rng), [free, beta]


def case_project(rng):
    j = _p("joints3d", rng.normal(size=(2, 4, 3)))
    cam = _p("camera", rng.normal(size=(2, 3)))
    return _projected(project, rng), [j, cam]


def _random_H(rng, n, k):
    topo = build_topology(rng.normal(size=(n, 4)), k)
    return topo.H


def case_node_to_edge(rng):
    n = int(rng.integers(2, 6))
    H = _random_H(rng, n, int(rng.integers(1, n + 1)))
    h, W = _p("h", rng.normal(size=(n, 3))), _p("W_agg", rng.normal(size=(3, 3)))
    norm = bool(rng.random() < 0.5)
    return _projected(lambda a, b: node_to_edge(a, H, b, norm), rng), [h, W]


def case_edge_to_node(rng):
    n = int(rng.integers(2, 6))
    H = _random_H(rng, n, int(rng.integers(1, n + 1)))
    F, W = _p("F", rng.normal(size=(n, 3))), _p("W_update", rng.normal(size=(3, 3)))
    norm = bool(rng.random() < 0.5)
    return _projected(lambda a, b: edge_to_node(a, H, b, norm), rng), [F, W]


def case_reason(rng):
    n = int(rng.integers(2, 6))
    H = _random_H(rng, n, int(rng.integers(1, n + 1)))
    weights = BranchWeights(3, rng, 2)
    hs = {m: _p(f"h_{m}", rng.normal(size=(n, 3))) for m in ("rgb", "depth", "pose")}
    rounds = int(rng.integers(1, 3))
    residual = bool(rng.random() < 0.5)

    def fn(a, b, c, w):
        out = reason({"rgb": a, "depth": b, "pose": c}, H, weights, rounds, residual=residual)
        return dc.concat([out.rgb, out.depth, out.pose], axis=1)

    return _projected(fn, rng), [hs["rgb"], hs["depth"], hs["pose"], weights.agg("depth")]


# ---------------------------------------------------------------------------
# losses


def _positives(rng, n):
    """Random symmetric positive sets with at least one contributing anchor."""
    D = rng.uniform(0.0, 0.3, size=(n, n))
    D = (D + D.T) / 2.0
    np.fill_diagonal(D, 0.0)
    D[0, 1] = D[1, 0] = 0.05
    return sets_from_distances(D, 0.15)


def case_intra_loss(rng):
    n = 4
    pos = _positives(rng, n)
    denom = "all" if rng.random() < 0.3 else "positives"
    h = _p("h", rng.normal(size=(n, EMBED_DIM)))
    return (lambda t: intra_loss(t, pos, 0.07, "mean", denom)), [h]


def case_cross_loss(rng):
    n = int(rng.integers(1, 5))
    hs = [_p(f"h_{m}", rng.normal(size=(n, EMBED_DIM))) for m in ("rgb", "depth", "pose")]
    return (lambda a, b, c: cross_loss(a, b, c)), hs


def case_contrastive_loss(rng):
    n = int(rng.integers(2, 6))
    pos = _positives(rng, n)
    cfg = ContrastConfig()
    hs = [_p(f"h_{m}", rng.normal(size=(n, EMBED_DIM))) for m in ("rgb", "depth", "pose")]

    class _Emb:
        def __init__(self, a, b, c):
            self.maps = {"rgb": a, "depth": b, "pose": c}
            self.degraded = None

        def by_modality(self):
            return self.maps

    return (lambda a, b, c: contrastive_loss(_Emb(a, b, c), pos, cfg)[0]), hs


def case_reprojection_loss(rng):
    pred = _p("pred2d", rng.normal(size=(2, 5, 2)))
    tgt = rng.normal(size=(2, 5, 2))
    vis = rng.random((2, 5)) < 0.7
    vis[0, 0] = True
    return (lambda p: reprojection_loss(p, tgt, vis)), [pred]


def case_smpl_loss(rng):
    pose = _p("pose6d", rng.normal(size=(2, N_JOINTS, 6)))
    beta = _p("shape", rng.normal(size=(2, N_SHAPE)))
    t_pose, t_beta = rng.normal(size=(2, N_JOINTS, 6)), rng.normal(size=(2, N_SHAPE))
    return (lambda p, b: smpl_loss(ParamPrediction(p, b, None), t_pose, t_beta)), [pose, beta]


def case_joint_loss(rng):
    j = _p("joints3d", rng.normal(size=(2, N_JOINTS, 3)))
    tgt = rng.normal(size=(2, N_JOINTS, 3))
    return (lambda t: joint_loss(t, tgt)), [j]


def case_total_loss(rng):
    pose, free = _selected_pose(rng)
    beta = _p("shape", rng.normal(0.0, 1.0, size=(1, N_SHAPE)))
    cam = _p("camera", np.array([[rng.uniform(0.3, 1.0), *rng.normal(0.0, 0.2, size=2)]]))
    con = _p("contrastive", rng.uniform(0.0, 2.0, size=()))
    targets = RegressionTargets(
        joints2d=rng.normal(0.0, 0.3, size=(1, N_JOINTS, 2)),
        visible=rng.random((1, N_JOINTS)) < 0.7,
        pose6d=np.tile(IDENTITY_6D, (1, N_JOINTS, 1)) + rng.normal(0.0, 0.2, size=(1, N_JOINTS, 6)),
        shape=rng.normal(size=(1, N_SHAPE)),
        joints3d=rng.normal(0.0, 0.3, size=(1, N_JOINTS, 3)),
    )
    lambdas = tuple(rng.uniform(0.1, 2.0, size=4))

    def fn(p, b, c, k):
        full = pose(p)
        pred = ParamPrediction(full, b, c)
        joints = forward_kinematics(rot6d_to_rotmat(full), b)
        return total_loss(pred, joints, targets, lambdas, k)[0]

    return fn, [free, beta, cam, con]


_TINY = EncoderConfig(patch_size=4, feature_dim=6, latent_dim=4, hidden_dim=6, pose_conv_channels=(4,))


def tiny_observations(rng, n=3, patch=4):
    """A small random observation group for end-to-end checks."""
    from .nodeinit import Observations

    joints2d = np.concatenate(
        [rng.normal(0.0, 20.0, size=(n, N_JOINTS, 2)) + 100.0, rng.uniform(0.3, 1.0, size=(n, N_JOINTS, 1))], axis=-1
    )
    pose = np.tile(IDENTITY_6D, (n, N_JOINTS, 1)) + rng.normal(0.0, 0.2, size=(n, N_JOINTS, 6))
    with dc.no_grad():
        j3d = forward_kinematics(rot6d_to_rotmat(pose), np.zeros((n, N_SHAPE))).data
    return Observations(
        joints2d=joints2d,
        depth=rng.uniform(0.0, 1.0, size=(n, patch, patch)),
        bbox=np.c_[rng.uniform(80, 120, size=(n, 2)), rng.uniform(60, 90, size=n)],
        rgb=rng.uniform(0.0, 1.0, size=(n, 3 * patch * patch)),
        tz_bias=np.zeros(n),
        focal=1500.0,
        center=(100.0, 100.0),
        gt_joints3d=j3d,
        gt_pose6d=pose,
        gt_shape=rng.normal(size=(n, N_SHAPE)),
    )


def case_end_to_end(rng):
    """Observations -> embeddings -> frozen topology -> reasoning -> heads -> composite loss."""
    model = CoMHR(ModelConfig(encoder=_TINY, K=2, head_hidden=6, seed=int(rng.integers(1 << 30))))
    for p in model.parameters():
        p.data = p.data + rng.normal(0.0, 0.05, size=p.shape)
    obs = tiny_observations(rng)
    with dc.no_grad():
        H = model.forward(obs).topology.H
    small = [p for p in model.parameters() if p.size <= 48]
    chosen = [small[i] for i in rng.choice(len(small), size=2, replace=False)]
    lambdas = (1.0, 1.0, 1.0, 1.0)

    def fn(*_):
        return model.loss(obs, lambdas, ContrastConfig(), H=H)[0]

    return fn, chosen


CASES = {
    "add": case_add, "sub": case_sub, "mul": case_mul, "div": case_div,
    "relu": case_relu, "exp": case_exp, "log": case_log, "where": case_where,
    "matmul": case_matmul, "cross": case_cross, "concat": case_concat, "stack": case_stack,
    "getitem": case_getitem, "take": case_take, "reshape": case_reshape, "transpose": case_transpose,
    "sum": case_sum, "mean": case_mean, "masked_mean": case_masked_mean, "mse": case_mse,
    "l2normalize": case_l2normalize, "cosine": case_cosine, "softmax": case_softmax,
    "layernorm": case_layernorm,
    "linear": case_linear, "mlp": case_mlp, "conv1d": case_conv1d, "masked_pool": case_masked_pool,
    "rot6d_to_rotmat": case_rot6d_to_rotmat, "forward_kinematics": case_forward_kinematics,
    "project": case_project, "node_to_edge": case_node_to_edge, "edge_to_node": case_edge_to_node,
    "reason": case_reason,
    "intra_loss": case_intra_loss, "cross_loss": case_cross_loss, "contrastive_loss": case_contrastive_loss,
    "reprojection_loss": case_reprojection_loss, "smpl_loss": case_smpl_loss, "joint_loss": case_joint_loss,
    "total_loss": case_total_loss, "end_to_end": case_end_to_end,
}


@dataclass
class CaseSummary:
    name: str
    instances: int
    worst: float
    checked: int
    skipped: int
    seconds: float

    def passed(self, tol):
        return self.worst < tol and self.checked > 0


def run_case(name, instances=100, seed=0, h=1e-3, tol=1e-4):
    builder = CASES[name]
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst, checked, skipped = 0.0, 0, 0
    t0 = time.perf_counter()
    for _ in range(instances):
        fn, params = builder(rng)
        rep = dc.gradcheck(fn, params, h=h, tol=tol)
        worst = max(worst, rep.worst)
        checked += sum(rep.checked.values())
        skipped += sum(rep.skipped.values())
    return CaseSummary(name, instances, worst, checked, skipped, time.perf_counter() - t0)


def run_suite(names=None, instances=100, seed=0, h=1e-3, tol=1e-4):
    return [run_case(n, instances, seed, h, tol) for n in (names or CASES)]
