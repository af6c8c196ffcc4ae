import dataclasses

import numpy as np
import pytest

from comhr import diffcore as dc
from comhr.errors import ShapeError
from comhr.nodeinit import (
    EncoderConfig,
    NodeInit,
    build_embeddings,
    encode_geometric,
    encode_pose,
    encode_visual,
    masked_pool,
    observations,
    pelvis_depth,
    visibility_mask,
)
from comhr.scenegen import depth_hole, generate_scene

from conftest import SMALL_ENCODER


def _weights(config=SMALL_ENCODER, seed=0):
    return NodeInit(config, np.random.default_rng(seed))


def _hip_setup(c_left, c_right):
    # bbox centred at the origin with unit size; hips land on cells (1,1) and (2,2) of a 4x4 patch
    joints = np.zeros((1, 24, 3))
    joints[0, :, 2] = 0.0
    joints[0, 1] = [-0.2, -0.2, c_left]
    joints[0, 2] = [0.2, 0.2, c_right]
    patch = np.zeros((1, 4, 4))
    patch[0, 1, 1], patch[0, 2, 2] = 2.0, 4.0
    return joints, patch, np.array([[0.0, 0.0, 1.0]])


def test_pelvis_depth_both_hips():
    tz, degraded = pelvis_depth(*_hip_setup(0.9, 0.9))
    assert tz[0] == 3.0 and not degraded[0]


def test_pelvis_depth_single_hip():
    joints, patch, bbox = _hip_setup(0.1, 0.9)
    patch[0, 2, 2] = 0.8
    tz, _ = pelvis_depth(joints, patch, bbox)
    assert tz[0] == 0.8


def test_pelvis_depth_nothing_visible():
    tz, degraded = pelvis_depth(*_hip_setup(0.0, 0.0))
    assert tz[0] == 0.0 and degraded[0]


def test_visibility_is_strict():
    j = np.zeros((1, 24, 3))
    j[0, :, 2] = 0.5
    j[0, 3, 2] = 0.5000001
    m = visibility_mask(j, 0.5)
    assert m.sum() == 1 and m[0, 3]


def test_masked_pool_hand_case():
    feats = dc.Tensor(np.array([[[1.0, 1.0], [3.0, 3.0]]]))
    assert masked_pool(feats, [[1, 0]]).data.tolist() == [[1.0, 1.0]]


def test_masked_pool_single_visible_joint_exact(rng):
    feats = rng.normal(size=(2, 24, 5))
    mask = np.zeros((2, 24))
    mask[0, 7] = mask[1, 23] = 1
    out = masked_pool(dc.Tensor(feats), mask).data
    assert out[0].tobytes() == feats[0, 7].tobytes() and out[1].tobytes() == feats[1, 23].tobytes()


def test_pose_encoder_all_invisible_is_zero_and_degraded():
    w = _weights()
    j = np.zeros((2, 24, 3))
    feat, degraded = encode_pose(w, j, np.zeros((2, 8, 8)), np.array([[0, 0, 1.0]] * 2))
    assert np.array_equal(feat.data, np.zeros((2, SMALL_ENCODER.feature_dim)))
    assert degraded.all()


def test_visual_zero_patch_zero_final_layer():
    w = _weights()
    w.enc_rgb.fc2.weight.data[:] = 0.0
    out = encode_visual(w, np.zeros((1, 3 * 64)))
    assert np.array_equal(out.data, np.zeros((1, SMALL_ENCODER.feature_dim)))


def test_geometric_zero_patch_zero_final_layer():
    w = _weights()
    w.enc_depth.fc2.weight.data[:] = 0.0
    assert not encode_geometric(w, np.zeros((1, 8, 8))).data.any()


def test_visual_ingest_passthrough():
    cfg = EncoderConfig(feature_dim=2048, ingest=True, patch_size=4, hidden_dim=8, latent_dim=8, pose_conv_channels=(4,))
    w = _weights(cfg)
    x = np.random.default_rng(0).normal(size=(2, 2048))
    assert encode_visual(w, x, ingest=True).data.tobytes() == x.tobytes()


def test_encoders_are_deterministic(rng):
    w = _weights()
    patch = rng.random((2, 8, 8))
    assert encode_geometric(w, patch).data.tobytes() == encode_geometric(w, patch).data.tobytes()
    rgb = rng.random((2, 3 * 64))
    assert encode_visual(w, rgb).data.tobytes() == encode_visual(w, rgb).data.tobytes()


def test_depth_hole_changes_geometric_feature():
    w = _weights()
    const = np.full((1, 8, 8), 0.7)
    holed = depth_hole(const[0], 0.6)[None]
    assert not np.array_equal(encode_geometric(w, const).data, encode_geometric(w, holed).data)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        encode_geometric(_weights(), np.zeros((1, 5, 5)))


def test_fused_raw_width_at_full_scale():
    assert EncoderConfig(feature_dim=2048).fused_raw_width == 6147
    assert EncoderConfig(feature_dim=2048, anchor_width=1).fused_raw_width == 6145


@pytest.fixture(scope="module")
def scene_obs():
    s = generate_scene(5, 4, patch_size=8)
    return s, observations(s)


def test_h_agg_is_lossless_concatenation(scene_obs):
    _, obs = scene_obs
    emb = build_embeddings(obs, _weights())
    d = SMALL_ENCODER.latent_dim
    assert emb.h_agg.shape == (5, 3 * d)
    for k, h in enumerate((emb.h_rgb, emb.h_depth, emb.h_pose)):
        assert emb.h_agg.data[:, k * d:(k + 1) * d].tobytes() == h.data.tobytes()


def test_zeroing_tz_changes_only_rgb(scene_obs):
    _, obs = scene_obs
    w = _weights()
    a = build_embeddings(obs, w)
    b = build_embeddings(obs, w, tz=np.zeros(len(obs)))
    assert not np.array_equal(a.h_rgb.data, b.h_rgb.data)
    assert a.h_depth.data.tobytes() == b.h_depth.data.tobytes()
    assert a.h_pose.data.tobytes() == b.h_pose.data.tobytes()


def test_depth_patch_never_reaches_rgb(scene_obs):
    _, obs = scene_obs
    w = _weights()
    tz = build_embeddings(obs, w).tz
    noisy = dataclasses.replace(obs, depth=np.random.default_rng(3).random(obs.depth.shape))
    a = build_embeddings(obs, w, tz=tz)
    b = build_embeddings(noisy, w, tz=tz)
    assert a.h_rgb.data.tobytes() == b.h_rgb.data.tobytes()
    assert not np.array_equal(a.h_depth.data, b.h_depth.data)


def test_disabled_modality_is_zero(scene_obs):
    _, obs = scene_obs
    emb = build_embeddings(obs, _weights(), modalities=("rgb", "pose"))
    assert not emb.h_depth.data.any()
