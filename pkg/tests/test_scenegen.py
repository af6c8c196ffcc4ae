import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comhr.errors import BadMagicError, MissingFileError, PerturbationError, SceneError
from comhr.nodeinit import pelvis_depth
from comhr.scenegen import (
    PerturbationSpec,
    depth_hole,
    generate_scene,
    load_scene,
    perturb,
    save_scene,
    scenes_equal,
)


def _tz(scene):
    tz, _ = pelvis_depth(
        np.stack([p.joints2d for p in scene.persons]),
        np.stack([p.depth_patch for p in scene.persons]),
        np.stack([p.bbox for p in scene.persons]),
    )
    return tz + np.array([p.tz_bias for p in scene.persons])


def test_generation_is_deterministic():
    assert scenes_equal(generate_scene(1, 7), generate_scene(1, 7))


def test_generation_serializes_identically(tmp_path):
    save_scene(generate_scene(3, 5), tmp_path / "a")
    save_scene(generate_scene(3, 5), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_cardinality():
    s = generate_scene(6, 0)
    assert len(s) == 6 and len({p.id for p in s.persons}) == 6


def test_field_invariants():
    s = generate_scene(8, 3)
    for p in s.persons:
        assert p.gt_joints3d.shape == (24, 3) and p.joints2d.shape == (24, 3)
        assert p.depth_patch.min() >= 0 and p.depth_patch.max() <= 1
        assert ((p.joints2d[:, 2] >= 0) & (p.joints2d[:, 2] <= 1)).all()
        assert p.bbox[2] > 0


def test_person_count_bounds():
    with pytest.raises(SceneError):
        generate_scene(0, 1)


def test_overlap_raises_occlusion():
    def low_conf_share(spread):
        c = np.concatenate([[p.joints2d[:, 2] for p in generate_scene(8, s, spread=spread, patch_size=8).persons]
                            for s in range(100)])
        return np.mean(c <= 0.5)

    assert low_conf_share(0.05) > low_conf_share(1.0)


def test_depth_hole_central_block():
    out = depth_hole(np.ones((8, 8)), 0.6)
    k = math.ceil(0.6 * 8)
    r0 = (8 - k) // 2
    assert (out[r0:r0 + k, r0:r0 + k] == 0).all()
    mask = np.ones((8, 8), dtype=bool)
    mask[r0:r0 + k, r0:r0 + k] = False
    assert (out[mask] == 1).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.floats(0.0, 1.0))
def test_depth_hole_idempotent(h, w, f):
    x = np.random.default_rng(h * w).random((h, w))
    once = depth_hole(x, f)
    assert np.array_equal(depth_hole(once, f), once)


def test_zero_noise_leaves_patches():
    s = generate_scene(3, 2, patch_size=8)
    out = perturb(s, PerturbationSpec("sensor-noise", {"sigma": 0.0}))
    assert scenes_equal(s, out)


def test_zero_probability_tz_bias():
    s = generate_scene(4, 2, patch_size=8)
    out = perturb(s, PerturbationSpec("tz-bias", {"p": 0.0}))
    assert np.array_equal(_tz(s), _tz(out))


@pytest.mark.parametrize("kind", ["foreground-truncation", "sensor-noise", "depth-hole", "tz-bias"])
def test_perturb_never_touches_ground_truth(kind):
    s = generate_scene(5, 9, patch_size=8)
    out = perturb(s, PerturbationSpec(kind))
    for p, q in zip(s.persons, out.persons):
        assert p.gt_joints3d.tobytes() == q.gt_joints3d.tobytes()


def test_bad_perturbation_specs():
    with pytest.raises(PerturbationError):
        PerturbationSpec("blur")
    with pytest.raises(PerturbationError):
        PerturbationSpec("depth-hole", {"fraction": 1.5})
    with pytest.raises(PerturbationError):
        PerturbationSpec("sensor-noise", {"sigma": -1})


def test_round_trip(tmp_path):
    s = generate_scene(4, 3)
    save_scene(s, tmp_path)
    assert scenes_equal(s, load_scene(tmp_path / "manifest.json"))


def test_missing_patch_file_names_path(tmp_path):
    save_scene(generate_scene(2, 3, patch_size=8), tmp_path)
    victim = tmp_path / "p0001_depth_patch.cmhr"
    victim.unlink()
    with pytest.raises(MissingFileError, match="p0001_depth_patch.cmhr"):
        load_scene(tmp_path)


def test_bad_magic_in_scene(tmp_path):
    save_scene(generate_scene(2, 3, patch_size=8), tmp_path)
    f = tmp_path / "p0000_joints2d.cmhr"
    f.write_bytes(b"XXXX" + f.read_bytes()[4:])
    with pytest.raises(BadMagicError):
        load_scene(tmp_path)
