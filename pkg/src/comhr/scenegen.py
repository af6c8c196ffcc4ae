"""Synthetic crowd scenes, observation perturbations and scene file I/O.

Scenes stand in for real detections.  Each person is posed with the desk
skeleton, placed at a distinct depth in front of a pinhole camera and
observed through three channels:

* ``joints2d`` - weak-perspective keypoints with pixel noise and confidences
  that drop (x0.2) when a strictly nearer person's box covers the joint;
* ``depth_patch`` - relative depth in [0, 1] (nearer is larger) sampled over
  the person's box, rendered as per-joint discs over a zero background;
* ``rgb_patch`` - the same disc rendering shaded with each person's colour.

Image coordinates use a y-up convention (``y = f * Y / Z + p_y``) so the
weak-perspective model ``s * (X, Y) + t`` needs no axis flip.  All stored
values are rounded to float32 so that save/load round-trips bitwise.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import container
from .container import f32
from .errors import MissingFileError, PerturbationError, SceneError
from .nodeinit import pelvis_depth
from .regressor import N_JOINTS, N_SHAPE, SKELETON, forward_kinematics_np, matrix_to_rot6d

FOCAL = 1500.0
IMAGE_SIZE = (1920, 1080)
DEPTH_NEAR, DEPTH_FAR = 3.0, 15.0
MAX_PERSONS = 512
OCCLUSION_FACTOR = 0.2
JOINT_RADIUS_M = 0.07
# fixed per-joint shading so the rgb rendering carries some part identity
PART_SHADE = 0.55 + 0.45 * np.linspace(0.0, 1.0, N_JOINTS)


@dataclass
class PersonRecord:
    id: int
    gt_joints3d: np.ndarray            # (24, 3) camera-frame metres
    joints2d: np.ndarray               # (24, 3) x, y, confidence
    depth_patch: np.ndarray            # (P, P)
    bbox: np.ndarray                   # (3,) c_x, c_y, s in pixels
    rgb_patch: np.ndarray | None = None        # (3, P, P)
    rgb_feature: np.ndarray | None = None      # precomputed visual feature
    gt_pose6d: np.ndarray | None = None        # (24, 6)
    gt_shape: np.ndarray | None = None         # (10,)
    tz_bias: float = 0.0               # added to the pelvis depth at encoding time


@dataclass
class Scene:
    persons: list
    seed: int
    focal: float = FOCAL
    image_size: tuple = IMAGE_SIZE

    def __post_init__(self):
        if not self.persons:
            raise SceneError("a scene needs at least one person")
        ids = [p.id for p in self.persons]
        if len(set(ids)) != len(ids):
            raise SceneError(f"duplicate person ids: {ids}")

    @property
    def center(self):
        return (self.image_size[0] / 2.0, self.image_size[1] / 2.0)

    def __len__(self):
        return len(self.persons)


# ---------------------------------------------------------------------------
# generation


def relative_depth(z):
    return np.clip((DEPTH_FAR - np.asarray(z)) / (DEPTH_FAR - DEPTH_NEAR), 0.0, 1.0)


def patch_pixel_centers(bbox, patch_size):
    """(P, P, 2) pixel coordinates of the patch cell centres for one box."""
    cx, cy, s = bbox
    t = ((np.arange(patch_size) + 0.5) / patch_size - 0.5) * s
    xs = cx + t[None, :].repeat(patch_size, 0)
    ys = cy + t[:, None].repeat(patch_size, 1)
    return np.stack([xs, ys], axis=-1)


N_LIBRARY_ACTIONS = 8
# a fixed library of body configurations shared by every scene
_ACTION_LIBRARY = np.random.default_rng(20240601).normal(0.0, 0.35, size=(N_LIBRARY_ACTIONS, N_JOINTS, 3))


def _random_pose(rng, n, n_actions):
    """Local rotations (n, 24, 3, 3) drawn around a few actions from the shared library."""
    picked = rng.choice(N_LIBRARY_ACTIONS, size=n_actions, replace=False)
    yaw = rng.uniform(-np.pi / 3, np.pi / 3, size=n_actions)
    body = _ACTION_LIBRARY[picked]
    action = rng.integers(0, n_actions, size=n)
    vec = body[action] + rng.normal(0.0, 0.05, size=(n, N_JOINTS, 3))
    vec[:, 0] = 0.0
    vec[:, 0, 1] = yaw[action] + rng.normal(0.0, 0.1, size=n)
    return Rotation.from_rotvec(vec.reshape(-1, 3)).as_matrix().reshape(n, N_JOINTS, 3, 3)


def _render_image(px, radius_px, depth_val, colours, order):
    """Paint joint discs far-to-near into full-image depth and rgb buffers."""
    w, h = IMAGE_SIZE
    depth = np.zeros((h, w))
    rgb = np.full((3, h, w), 0.1)
    for i in order:
        r = radius_px[i]
        for k in range(N_JOINTS):
            x, y = px[i, k]
            x0, x1 = max(int(np.floor(x - r)), 0), min(int(np.ceil(x + r)) + 1, w)
            y0, y1 = max(int(np.floor(y - r)), 0), min(int(np.ceil(y + r)) + 1, h)
            if x0 >= x1 or y0 >= y1:
                continue
            gx = np.arange(x0, x1) + 0.5 - x
            gy = np.arange(y0, y1) + 0.5 - y
            disc = gy[:, None] ** 2 + gx[None, :] ** 2 <= r * r
            depth[y0:y1, x0:x1][disc] = depth_val[i, k]
            rgb[:, y0:y1, x0:x1][:, disc] = (colours[i] * PART_SHADE[k])[:, None]
    return depth, rgb


def _sample_patch(image, bbox, patch_size, fill):
    """Nearest-pixel crop of ``image`` (..., H, W) over a square box."""
    h, w = image.shape[-2:]
    centers = patch_pixel_centers(bbox, patch_size)
    col = np.floor(centers[..., 0]).astype(int)
    row = np.floor(centers[..., 1]).astype(int)
    inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = image[..., np.clip(row, 0, h - 1), np.clip(col, 0, w - 1)]
    return np.where(inside, out, fill)


def generate_scene(n_persons, seed, *, spread=1.0, patch_size=32, pixel_noise=2.0, n_actions=None):
    """Deterministic synthetic scene for ``(n_persons, seed)``.

    ``spread`` scales the lateral placement; small values make boxes overlap
    and so raise the share of occluded (low-confidence) joints.
    """
    if not 1 <= n_persons <= MAX_PERSONS:
        raise SceneError(f"n_persons must be in [1, {MAX_PERSONS}], got {n_persons}")
    rng = np.random.default_rng(seed)
    n = n_persons
    if n_actions is None:
        n_actions = int(rng.integers(1, 4))
    rotmats = _random_pose(rng, n, n_actions)
    shape = np.clip(rng.normal(0.0, 0.8, size=(n, N_SHAPE)), -2.5, 2.5)
    local = forward_kinematics_np(rotmats, shape, SKELETON)

    depth_lo = DEPTH_NEAR + 1.0
    depth_hi = min(DEPTH_FAR - 1.0, depth_lo + 2.0 + 0.05 * n)
    z = np.sort(rng.uniform(depth_lo, depth_hi, size=n))
    z = z + 1e-3 * np.arange(n)          # strictly distinct depths
    z = z[rng.permutation(n)]
    x = spread * rng.uniform(-1.0, 1.0, size=n) * 0.5 * z
    y = -0.2 + rng.normal(0.0, 0.02, size=n)
    root = np.stack([x, y, z], axis=1)
    gt3d = f32(local + root[:, None, :])

    f = FOCAL
    cx0, cy0 = IMAGE_SIZE[0] / 2.0, IMAGE_SIZE[1] / 2.0
    scale = f / z
    px = gt3d[..., :2] * scale[:, None, None] + np.array([cx0, cy0])
    lo, hi = px.min(axis=1), px.max(axis=1)
    bbox = np.concatenate([(lo + hi) / 2.0, 1.2 * (hi - lo).max(axis=1, keepdims=True)], axis=1)
    obs = px + rng.normal(0.0, pixel_noise, size=px.shape)
    conf = rng.uniform(0.75, 1.0, size=(n, N_JOINTS))
    # occluders are the tight joint extents of strictly nearer persons
    pad = (JOINT_RADIUS_M * scale)[:, None]
    occ_lo, occ_hi = lo - pad, hi + pad
    for i in range(n):
        nearer = np.flatnonzero(z < z[i])
        if len(nearer) == 0:
            continue
        p = obs[i][:, None, :]
        inside = ((p >= occ_lo[nearer]) & (p <= occ_hi[nearer])).all(-1).any(-1)
        conf[i, inside] *= OCCLUSION_FACTOR

    joint_z = gt3d[..., 2]
    depth_val = relative_depth(joint_z)
    radius = JOINT_RADIUS_M * scale
    colours = rng.uniform(0.2, 1.0, size=(n, 3))
    depth_img, rgb_img = _render_image(px, radius, depth_val, colours, np.argsort(-z, kind="stable"))
    persons = []
    for i in range(n):
        dpatch = _sample_patch(depth_img, bbox[i], patch_size, 0.0)
        rgb = _sample_patch(rgb_img, bbox[i], patch_size, 0.1)
        rgb = np.clip(rgb + rng.normal(0.0, 0.02, size=rgb.shape), 0.0, 1.0)
        persons.append(PersonRecord(
            id=i,
            gt_joints3d=gt3d[i],
            joints2d=f32(np.concatenate([obs[i], conf[i][:, None]], axis=1)),
            depth_patch=f32(dpatch),
            bbox=f32(bbox[i]),
            rgb_patch=f32(rgb),
            gt_pose6d=f32(matrix_to_rot6d(rotmats[i])),
            gt_shape=f32(shape[i]),
        ))
    return Scene(persons=persons, seed=int(seed))


# ---------------------------------------------------------------------------
# perturbations

PERTURBATION_KINDS = ("foreground-truncation", "sensor-noise", "depth-hole", "tz-bias")
_DEFAULTS = {
    "foreground-truncation": {"max_fraction": 0.1, "seed": 0},
    "sensor-noise": {"sigma": 0.1, "seed": 0},
    "depth-hole": {"fraction": 0.6},
    "tz-bias": {"p": 0.3, "sigma_mult": 3.0, "seed": 0},
}


@dataclass
class PerturbationSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise PerturbationError(f"unknown perturbation kind {self.kind!r}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise PerturbationError(f"{self.kind}: unknown params {sorted(unknown)}")
        self.params = {**_DEFAULTS[self.kind], **self.params}
        p = self.params
        for key in ("max_fraction", "fraction", "p"):
            if key in p and not 0.0 <= p[key] <= 1.0:
                raise PerturbationError(f"{self.kind}: {key}={p[key]} outside [0, 1]")
        for key in ("sigma", "sigma_mult"):
            if key in p and p[key] < 0:
                raise PerturbationError(f"{self.kind}: {key} must be >= 0")


def _joint_patch_index(joints2d, bbox, patch_size):
    u = (joints2d[:, 0] - bbox[0]) / bbox[2] + 0.5
    v = (joints2d[:, 1] - bbox[1]) / bbox[2] + 0.5
    col = np.clip(np.floor(u * patch_size), 0, patch_size - 1).astype(int)
    row = np.clip(np.floor(v * patch_size), 0, patch_size - 1).astype(int)
    return row, col


def perturb(scene, spec, tau_vis=0.5):
    """Return a degraded copy of ``scene``; ground truth is never touched.

    * foreground-truncation: zero the first ceil(s_i * P) rows (the feet end
      under the y-up convention) of each depth patch, s_i ~ U(0, max_fraction),
      and zero the confidence of joints falling in those rows;
    * sensor-noise: add N(0, sigma^2) to depth patches, clamp to [0, 1];
    * depth-hole: zero the central ceil(fraction * P) square;
    * tz-bias: with probability p add N(0, (sigma_mult * sigma_z)^2) to a
      person's pelvis depth at encoding time, sigma_z being the spread of
      the scene's clean pelvis depths.
    """
    if not isinstance(spec, PerturbationSpec):
        spec = PerturbationSpec(*spec) if isinstance(spec, tuple) else PerturbationSpec(**spec)
    out = copy.deepcopy(scene)
    p = spec.params
    rng = np.random.default_rng(p.get("seed", 0))
    if spec.kind == "foreground-truncation":
        for person in out.persons:
            size = person.depth_patch.shape[0]
            rows = math.ceil(rng.uniform(0.0, p["max_fraction"]) * size)
            if rows == 0:
                continue
            person.depth_patch[:rows] = 0.0
            r, _ = _joint_patch_index(person.joints2d, person.bbox, size)
            person.joints2d[r < rows, 2] = 0.0
    elif spec.kind == "sensor-noise":
        for person in out.persons:
            noise = rng.normal(0.0, p["sigma"], size=person.depth_patch.shape)
            person.depth_patch = f32(np.clip(person.depth_patch + noise, 0.0, 1.0))
    elif spec.kind == "depth-hole":
        for person in out.persons:
            person.depth_patch = depth_hole(person.depth_patch, p["fraction"])
    elif spec.kind == "tz-bias":
        tz, _ = pelvis_depth(
            np.stack([q.joints2d for q in out.persons]),
            np.stack([q.depth_patch for q in out.persons]),
            np.stack([q.bbox for q in out.persons]),
            tau_vis,
        )
        sigma_z = float(np.std(tz))
        flags = rng.random(len(out.persons)) < p["p"]
        bias = rng.normal(0.0, p["sigma_mult"] * sigma_z, size=len(out.persons))
        for person, flag, b in zip(out.persons, flags, bias):
            if flag:
                person.tz_bias = float(person.tz_bias + b)
    return out


def depth_hole(patch, fraction=0.6):
    patch = np.array(patch, dtype=np.float64)
    h, w = patch.shape
    kh, kw = math.ceil(fraction * h), math.ceil(fraction * w)
    r0, c0 = (h - kh) // 2, (w - kw) // 2
    patch[r0:r0 + kh, c0:c0 + kw] = 0.0
    return patch


# ---------------------------------------------------------------------------
# file I/O

_ARRAY_FIELDS = ("gt_joints3d", "joints2d", "depth_patch", "rgb_patch", "rgb_feature", "gt_pose6d", "gt_shape")
_REQUIRED = ("gt_joints3d", "joints2d", "depth_patch")
_EXPECTED_DIMS = {"gt_joints3d": (N_JOINTS, 3), "joints2d": (N_JOINTS, 3), "gt_pose6d": (N_JOINTS, 6),
                  "gt_shape": (N_SHAPE,)}


def save_scene(scene, path):
    """Write ``manifest.json`` plus one container per person array into ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for person in scene.persons:
        files = {}
        for name in _ARRAY_FIELDS:
            value = getattr(person, name)
            if value is None:
                continue
            fname = f"p{person.id:04d}_{name}.cmhr"
            container.save_tensor(root / fname, value)
            files[name] = fname
        entries.append({
            "id": int(person.id),
            "bbox": [float(v) for v in person.bbox],
            "tz_bias": float(person.tz_bias),
            "files": files,
        })
    manifest = {
        "format": "comhr-scene",
        "version": 1,
        "seed": int(scene.seed),
        "focal": float(scene.focal),
        "image_size": [int(v) for v in scene.image_size],
        "persons": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root / "manifest.json"


def load_scene(manifest_path):
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise MissingFileError(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "comhr-scene":
        raise SceneError(f"{path}: not a comhr scene manifest")
    persons = []
    for entry in manifest["persons"]:
        files = entry["files"]
        missing = [k for k in _REQUIRED if k not in files]
        if missing:
            raise SceneError(f"{path}: person {entry['id']} lacks {missing}")
        arrays = {}
        for name, fname in files.items():
            if name not in _ARRAY_FIELDS:
                raise SceneError(f"{path}: unknown field {name!r}")
            arr = container.load_tensor(path.parent / fname)
            want = _EXPECTED_DIMS.get(name)
            if want is not None and arr.shape != want:
                raise SceneError(f"{path.parent / fname}: dims {list(arr.shape)}, expected {list(want)}")
            arrays[name] = arr
        persons.append(PersonRecord(
            id=int(entry["id"]),
            bbox=np.array(entry["bbox"], dtype=np.float64),
            tz_bias=float(entry.get("tz_bias", 0.0)),
            **arrays,
        ))
    return Scene(persons=persons, seed=int(manifest["seed"]), focal=float(manifest["focal"]),
                 image_size=tuple(manifest["image_size"]))


def scenes_equal(a, b):
    """Field-by-field bitwise equality."""
    if (a.seed, a.focal, tuple(a.image_size), len(a.persons)) != (b.seed, b.focal, tuple(b.image_size), len(b.persons)):
        return False
    for p, q in zip(a.persons, b.persons):
        if p.id != q.id or p.tz_bias != q.tz_bias:
            return False
        for name in _ARRAY_FIELDS + ("bbox",):
            u, v = getattr(p, name), getattr(q, name)
            if (u is None) != (v is None):
                return False
            if u is not None and (u.shape != v.shape or u.tobytes() != v.tobytes()):
                return False
    return True
