from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..errors import NonFiniteLossError
from ..nodeinit import observations
from .partition import partition_subgroups
from .schedule import cosine_restart_lr


@dataclass
class TrainState:
    step: int = 0
    velocity: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def prepare(scenes, config, ingest=False):
    """Split scenes into subgroup observations once, ahead of training."""
    tau = config.model.encoder.visibility_threshold
    out = []
    for scene in scenes:
        groups = partition_subgroups(scene, config.max_group, tau)
        out.append([observations(scene, list(g.indices), ingest) for g in groups])
    return out


def _is_prepared(batch):
    return bool(batch) and isinstance(batch[0], list)


def batch_loss(model, batch, config):
    """Mean over scenes of the person-weighted mean over subgroups."""
    total = dc.Tensor(0.0)
    comps = {}
    for groups in batch:
        n_scene = sum(len(g) for g in groups)
        for obs in groups:
            loss, parts, _ = model.loss(obs, config.effective_lambdas, config.contrast)
            w = len(obs) / n_scene / len(batch)
            total = total + loss * w
            for k, v in parts.items():
                comps[k] = comps.get(k, 0.0) + float(v.data) * w
    comps["total"] = float(total.data)
    for k, v in comps.items():
        if not math.isfinite(v):
            raise NonFiniteLossError(k, v)
    return total, comps


def apply_update(params, lr, config, state):
    if config.clip_norm > 0:
        norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
        scale = min(1.0, config.clip_norm / norm) if norm > 0 else 1.0
    else:
        scale = 1.0
    for p in params:
        if not p.trainable:
            continue
        g = p.grad * scale if scale != 1.0 else p.grad
        if config.optimizer == "momentum":
            v = state.velocity.get(p.name)
            v = g.copy() if v is None else config.momentum * v + g
            state.velocity[p.name] = v
            g = v
        elif config.optimizer == "adam":
            b1, b2 = config.momentum, config.adam_beta2
            m = b1 * state.velocity.get(p.name, 0.0) + (1 - b1) * g
            v = b2 * state.second.get(p.name, 0.0) + (1 - b2) * g * g
            state.velocity[p.name], state.second[p.name] = m, v
            t = state.step + 1
            g = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + config.adam_eps)
        p.data -= lr * g


def train_step(model, scenes, config, state=None):
    """One gradient step over a batch of scenes; returns the step log record."""
    state = state if state is not None else TrainState()
    batch = scenes if _is_prepared(scenes) else prepare(scenes, config, model.config.encoder.ingest)
    t0 = time.perf_counter()
    params = model.parameters()
    for p in params:
        p.zero_grad()
    total, comps = batch_loss(model, batch, config)
    dc.backward(total)
    lr = cosine_restart_lr(state.step, config.lr, config.restart_period, config.min_lr, config.restart_mult)
    apply_update(params, lr, config, state)
    state.step += 1
    return {"step": state.step, "lr": lr, "losses": comps, "time": time.perf_counter() - t0}


def train(model, scenes, config, log_path=None, state=None, steps=None):
    """Run ``config.epochs`` epochs (or exactly ``steps`` steps) of minibatch training."""
    state = state or TrainState()
    prepared = scenes if _is_prepared(scenes) else prepare(scenes, config, model.config.encoder.ingest)
    rng = np.random.default_rng(config.seed)
    n_batches = math.ceil(len(prepared) / config.batch_scenes)
    total_steps = steps if steps is not None else config.epochs * n_batches
    logs = []
    fh = open(log_path, "w") if log_path else None
    try:
        order = []
        while len(logs) < total_steps:
            if not order:
                perm = rng.permutation(len(prepared))
                order = [perm[i:i + config.batch_scenes] for i in range(0, len(perm), config.batch_scenes)]
            idx = order.pop(0)
            rec = train_step(model, [prepared[i] for i in idx], config, state)
            rec["epoch"] = len(logs) // n_batches
            logs.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
    finally:
        if fh:
            fh.close()
    return logs


def loss_curves(logs):
    curves = {}
    for rec in logs:
        for k, v in rec["losses"].items():
            curves.setdefault(k, []).append(v)
    return curves
