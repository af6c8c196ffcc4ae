"""Wall-clock and memory scaling of the per-subgroup reasoning stage."""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..hyperreason import reason
from ..hypertopo import build_topology
from ..nodeinit import build_embeddings, observations
from ..regressor import box_raw, forward_kinematics, fuse_final, rot6d_to_rotmat
from ..scenegen import generate_scene
from .partition import partition_subgroups


@dataclass
class BenchRow:
    persons: int
    groups: int
    max_group_size: int
    seconds: float
    peak_bytes: int


@dataclass
class BenchTable:
    rows: list
    slope: float         # seconds per person
    intercept: float
    residuals: list

    def ratio(self, a, b):
        ta = next(r.seconds for r in self.rows if r.persons == a)
        tb = next(r.seconds for r in self.rows if r.persons == b)
        return tb / ta

    def memory_ratio(self, a, b):
        ma = next(r.peak_bytes for r in self.rows if r.persons == a)
        mb = next(r.peak_bytes for r in self.rows if r.persons == b)
        return mb / ma

    def __str__(self):
        lines = [f"{'M':>5} {'groups':>7} {'seconds':>10} {'peak_kB':>9}"]
        for r in self.rows:
            lines.append(f"{r.persons:>5} {r.groups:>7} {r.seconds:>10.5f} {r.peak_bytes / 1024:>9.1f}")
        lines.append(f"fit: t = {self.slope:.3e} * M + {self.intercept:.3e}")
        return "\n".join(lines)


def _stage(model, obs, emb):
    """Topology, reasoning, fusion, heads and kinematics for one subgroup."""
    c = model.config
    topo = build_topology(emb.h_agg, c.K)
    refined = reason(emb, topo.H, model.branches, c.rounds, c.normalize, c.residual)
    v = fuse_final(refined, model.box(box_raw(obs.bbox, obs.focal, obs.center)))
    pred = model.heads(v)
    return forward_kinematics(rot6d_to_rotmat(pred.pose6d), pred.shape)


def _prepare(model, scene, max_group):
    c = model.config
    items = []
    with dc.no_grad():
        for g in partition_subgroups(scene, max_group, c.encoder.visibility_threshold):
            obs = observations(scene, list(g.indices), c.encoder.ingest)
            emb = build_embeddings(obs, model.nodeinit, c.encoder, modalities=c.modalities, use_tz=c.use_tz)
            items.append((obs, emb))
    return items


def time_stage(model, items, repeats=5):
    """Sum over subgroups of each pass's fastest time, so one stall only costs one group."""
    best = np.full(len(items), np.inf)
    with dc.no_grad():
        for _ in range(repeats):
            for i, (obs, emb) in enumerate(items):
                t0 = time.perf_counter()
                _stage(model, obs, emb)
                best[i] = min(best[i], time.perf_counter() - t0)
    return float(best.sum())


def peak_stage_memory(model, items):
    """Largest traced allocation peak over the sequence of subgroup passes."""
    peak = 0
    with dc.no_grad():
        tracemalloc.start()
        try:
            for obs, emb in items:
                tracemalloc.reset_peak()
                base = tracemalloc.get_traced_memory()[0]
                _stage(model, obs, emb)
                peak = max(peak, tracemalloc.get_traced_memory()[1] - base)
        finally:
            tracemalloc.stop()
    return peak


def bench_scaling(model, sizes=(8, 40, 80, 200), seed=0, repeats=5, max_group=8):
    rows = []
    for m in sizes:
        items = _prepare(model, generate_scene(m, seed), max_group)
        time_stage(model, items, 1)  # warm-up
        rows.append(BenchRow(
            persons=m,
            groups=len(items),
            max_group_size=max(len(o) for o, _ in items),
            seconds=time_stage(model, items, repeats),
            peak_bytes=peak_stage_memory(model, items),
        ))
    x = np.array([r.persons for r in rows], dtype=float)
    y = np.array([r.seconds for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    return BenchTable(rows, float(slope), float(intercept), list(y - (slope * x + intercept)))
