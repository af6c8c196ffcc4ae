"""Acceptance suite: one test per criterion, each reported as PASS/FAIL at the end of the run."""

import itertools
import math
import struct
import time

import numpy as np
import pytest

from comhr import container
from comhr.contrast import contrastive_total, cross_loss, intra_loss, sets_from_distances
from comhr.errors import BadMagicError, DimOverflowError, MissingFileError, TruncatedPayloadError, VersionMismatchError
from comhr.gradsuite import run_suite
from comhr.harness import TrainConfig, evaluate, partition_subgroups, train
from comhr.harness.ablation import ABLATION_PROTOCOL, ABLATION_ROWS, run_ablation, synthetic_split
from comhr.harness.bench import bench_scaling
from comhr.harness.checkpoint import load_checkpoint, quantize, save_checkpoint
from comhr.harness.metrics import predict
from comhr.harness.robustness import DEFAULT_SUITE, embedding_shift, run_robustness
from comhr.hyperreason import BranchWeights, reason
from comhr.hypertopo import affinity, build_topology, incidence, knn_neighbors
from comhr.model import CoMHR, ModelConfig
from comhr.nodeinit import build_embeddings, observations
from comhr.scenegen import PerturbationSpec, generate_scene, load_scene, perturb, save_scene, scenes_equal

from conftest import record
from test_hypertopo import oracle_neighbors, random_features

pytestmark = pytest.mark.acceptance


def test_gradient_integrity():
    t0 = time.perf_counter()
    summaries = run_suite(instances=100, h=1e-3, tol=1e-4)
    elapsed = time.perf_counter() - t0
    failing = [f"{s.name}={s.worst:.2e}" for s in summaries if not s.passed(1e-4)]
    ok = not failing and elapsed < 120
    record(1, ok, f"{len(summaries)} cases x 100 instances in {elapsed:.0f}s; over tolerance: {failing or 'none'}")
    assert elapsed < 120
    assert not failing


def test_topology_oracle():
    rng = np.random.default_rng(2024)
    sets = mismatches = 0
    for n in range(2, 9):
        for k in range(1000):
            h = random_features(rng, n) if k % 2 else rng.normal(size=(n, 5))
            A = affinity(h)
            sets += 1
            for K in range(1, n + 1):
                got = knn_neighbors(A, K)
                want = oracle_neighbors(A, K)
                H_want = np.zeros((n, n))
                for i, members in enumerate(want):
                    H_want[members, i] = 1
                if [list(g) for g in got] != want or not np.array_equal(incidence(got, n), H_want):
                    mismatches += 1
    record(2, mismatches == 0, f"{sets} embedding sets, every K, {mismatches} mismatches")
    assert mismatches == 0


def test_contrastive_closed_forms():
    singles = sets_from_distances(np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0.0]]), 0.5)
    h = np.random.default_rng(0).normal(size=(4, 6))
    v_single = intra_loss(h, singles).item()

    D = np.ones((3, 3))
    np.fill_diagonal(D, 0)
    D[0, 1] = D[0, 2] = 0
    tri = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.6, 0.0, 0.8]])
    v_ln2 = intra_loss(tri, sets_from_distances(D, 0.5)).item()

    v_same = cross_loss(h, h, h).item()
    ang = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    v = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v_120 = cross_loss(v[:1], v[1:2], v[2:]).item()
    v_total = contrastive_total([0.0, 0.0, 0.0], 0.5, 0.03).item()

    checks = {
        "singleton": abs(v_single) < 1e-9,
        "ln2": abs(v_ln2 - math.log(2)) < 1e-9,
        "identical": abs(v_same) < 1e-9,
        "120deg": abs(v_120 - 0.5) < 1e-9,
        "alpha": abs(v_total - 0.015) < 1e-9,
    }
    record(3, all(checks.values()), " ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert all(checks.values()), checks


def test_structural_invariants():
    rng = np.random.default_rng(11)
    problems = []
    for n in range(1, 9):
        for _ in range(25):
            h = rng.normal(size=(n, 9))
            for K in range(1, n + 1):
                topo = build_topology(h, K)
                if not np.array_equal(topo.H.sum(axis=0), np.full(n, K)) or not (np.diag(topo.H) == 1).all():
                    problems.append(("H", n, K))
            scaled = h * rng.uniform(0.01, 100.0, size=(n, 1))
            if np.abs(affinity(scaled) - affinity(h)).max() > 1e-12:
                problems.append(("scale", n))

    def emb(hs):
        from comhr import diffcore as dc

        return {m: dc.Tensor(x) for m, x in zip(("rgb", "depth", "pose"), hs)}

    n_perms = 0
    for n in range(1, 6):
        hs = [rng.normal(size=(n, 6)) for _ in range(3)]
        w = BranchWeights(6, rng, 3)
        H = build_topology(np.concatenate(hs, axis=1), min(3, n)).H
        base = reason(emb(hs), H, w).by_modality()
        for perm in itertools.permutations(range(n)):
            perm = list(perm)
            P = np.eye(n)[perm]
            out = reason(emb([x[perm] for x in hs]), P @ H @ P.T, w).by_modality()
            n_perms += 1
            if any(np.abs(out[m].data - base[m].data[perm]).max() > 1e-12 for m in base):
                problems.append(("perm", n, tuple(perm)))

    model = CoMHR(ModelConfig())
    scene = generate_scene(6, 21)
    obs = observations(scene)
    a = build_embeddings(obs, model.nodeinit)
    b = build_embeddings(obs, model.nodeinit, tz=np.zeros(len(obs)))
    noisy = observations(perturb(scene, PerturbationSpec("sensor-noise", {"sigma": 0.3})))
    c = build_embeddings(noisy, model.nodeinit, tz=a.tz - obs.tz_bias)
    if a.h_depth.data.tobytes() != b.h_depth.data.tobytes() or a.h_pose.data.tobytes() != b.h_pose.data.tobytes():
        problems.append(("tz isolation",))
    if a.h_rgb.data.tobytes() != c.h_rgb.data.tobytes():
        problems.append(("depth isolation",))
    if a.h_rgb.data.tobytes() == b.h_rgb.data.tobytes():
        problems.append(("tz has no effect",))
    record(4, not problems, f"{n_perms} permutations checked, problems: {problems[:3] or 'none'}")
    assert not problems


def test_overfit_single_scene():
    scene = generate_scene(6, seed=7)
    cfg = TrainConfig(lr=3e-2, clip_norm=1.0, restart_period=500, batch_scenes=1, seed=0,
                      model=ModelConfig(K=4))
    assert cfg.model.encoder.latent_dim == 64
    model = CoMHR(cfg.model)
    t0 = time.perf_counter()
    before = evaluate(model, [scene]).mpjpe_mm
    train(model, [scene], cfg, steps=500)
    after = evaluate(model, [scene]).mpjpe_mm
    elapsed = time.perf_counter() - t0
    ratio = after / before
    ok = ratio <= 0.30 and elapsed < 300
    record(5, ok, f"MPJPE {before:.1f} -> {after:.1f} mm (ratio {ratio:.3f}) in {elapsed:.0f}s")
    assert ratio <= 0.30 and elapsed < 300


def test_ablation_direction():
    p = ABLATION_PROTOCOL
    base = TrainConfig.from_dict(p["config"])
    rows = [r for r in ABLATION_ROWS if r.name in ("rgb-only", "+tz", "+contrastive")]
    train_scenes, val_scenes = synthetic_split(p["n_train"], p["n_val"], p["persons"], p["data_seed"])
    table = run_ablation(base, rows, seeds=p["seeds"], train_scenes=train_scenes, val_scenes=val_scenes,
                         steps=p["steps"])
    rgb, no_con, full = (table[n].mean_mpjpe_mm for n in ("rgb-only", "+tz", "+contrastive"))
    ok = full < rgb and full <= no_con
    record(6, ok, f"rgb-only {rgb:.2f} mm, full w/o contrastive {no_con:.2f} mm, full {full:.2f} mm "
                  f"({len(p['seeds'])} seeds)")
    print(table)
    assert full < rgb
    assert full <= no_con


def test_linear_scaling():
    model = CoMHR(ModelConfig())
    # the 8-person time is a single ~1 ms pass, so take the median of three benches
    tables = [bench_scaling(model, sizes=(8, 40, 80, 200), repeats=40) for _ in range(3)]
    ratios = sorted(t.ratio(8, 200) for t in tables)
    ratio = ratios[1]
    table = next(t for t in tables if t.ratio(8, 200) == ratio)
    mem = max(t.memory_ratio(8, 200) for t in tables)
    sizes_ok = all(len(g) <= 8 for m in (8, 40, 80, 200) for g in partition_subgroups(generate_scene(m, 0, patch_size=4)))
    sizes_ok &= all(r.max_group_size <= 8 for r in table.rows)
    ok = 25 * 0.7 <= ratio <= 25 * 1.3 and mem < 2.0 and sizes_ok
    record(7, ok, f"time ratio {ratio:.2f} (runs {ratios[0]:.2f}, {ratios[2]:.2f}), memory ratio {mem:.2f}, slope {table.slope:.2e}s/person")
    print(table)
    assert 25 * 0.7 <= ratio <= 25 * 1.3
    assert mem < 2.0 and sizes_ok


def test_robustness_suite():
    cfg = TrainConfig(lr=1e-3, optimizer="adam", batch_scenes=2, restart_period=10**6)
    model = CoMHR(cfg.model)
    train(model, [generate_scene(6, 300 + i) for i in range(4)], cfg, steps=20)
    scenes = [generate_scene(6, 400 + i) for i in range(4)]
    rows = run_robustness(model, scenes, DEFAULT_SUITE)
    finite = all(r.finite for r in rows)
    zero = [PerturbationSpec(k, {key: 0.0}) for k, key in
            (("foreground-truncation", "max_fraction"), ("sensor-noise", "sigma"), ("depth-hole", "fraction"), ("tz-bias", "p"))]
    zero_rows = run_robustness(model, scenes, zero)
    zero_ok = all(r.delta_mpjpe_mm == 0.0 and r.delta_depth_acc == 0.0 for r in zero_rows)
    shifts = [embedding_shift(model, s, PerturbationSpec("tz-bias", {"p": 0.3})) for s in scenes]
    isolated = all(s["depth"] == 0.0 and s["pose"] == 0.0 for s in shifts)
    deltas = ", ".join(f"{r.kind} {r.delta_mpjpe_mm:+.3f}" for r in rows)
    ok = finite and zero_ok and isolated
    record(8, ok, f"deltas (mm): {deltas}; zero-strength exact: {zero_ok}; tz-bias isolated: {isolated}")
    assert finite and zero_ok and isolated


def test_serialization(tmp_path):
    problems = []
    scene = generate_scene(5, 3)
    save_scene(scene, tmp_path / "scene")
    if not scenes_equal(scene, load_scene(tmp_path / "scene" / "manifest.json")):
        problems.append("scene")

    model = quantize(CoMHR(ModelConfig(seed=4)))
    save_checkpoint(model, tmp_path / "ckpt")
    loaded = load_checkpoint(tmp_path / "ckpt")
    if any(p.data.tobytes() != q.data.tobytes() for p, q in zip(model.parameters(), loaded.parameters())):
        problems.append("checkpoint params")
    if predict(model, scene)["joints3d"].tobytes() != predict(loaded, scene)["joints3d"].tobytes():
        problems.append("checkpoint predictions")

    good = container.encode(np.arange(6.0).reshape(2, 3))
    cases = {
        BadMagicError: b"XXXX" + good[4:],
        VersionMismatchError: good[:4] + struct.pack("<I", 7) + good[8:],
        TruncatedPayloadError: good[:-4],
        DimOverflowError: b"CMHR" + struct.pack("<IIII", 1, 2, 2**16, 2**16),
    }
    for err, buf in cases.items():
        try:
            container.decode(buf)
            problems.append(f"{err.__name__} not raised")
        except err:
            pass
    try:
        container.load_tensor(tmp_path / "absent.cmhr")
        problems.append("MissingFileError not raised")
    except MissingFileError as e:
        if "absent.cmhr" not in str(e):
            problems.append("missing path not named")
    record(9, not problems, f"round-trips and {len(cases) + 1} error kinds, problems: {problems or 'none'}")
    assert not problems
