"""Clean-vs-perturbed evaluation over a suite of observation corruptions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..nodeinit import build_embeddings, observations
from ..scenegen import PerturbationSpec, perturb
from .metrics import evaluate

DEFAULT_SUITE = (
    PerturbationSpec("foreground-truncation", {"max_fraction": 0.1}),
    PerturbationSpec("sensor-noise", {"sigma": 0.1}),
    PerturbationSpec("depth-hole", {"fraction": 0.6}),
    PerturbationSpec("tz-bias", {"p": 0.3}),
)


@dataclass
class RobustnessRow:
    kind: str
    params: dict
    clean_mpjpe_mm: float
    perturbed_mpjpe_mm: float
    clean_depth_acc: float
    perturbed_depth_acc: float

    @property
    def delta_mpjpe_mm(self):
        return self.perturbed_mpjpe_mm - self.clean_mpjpe_mm

    @property
    def delta_depth_acc(self):
        return self.perturbed_depth_acc - self.clean_depth_acc

    @property
    def finite(self):
        vals = (self.perturbed_mpjpe_mm, self.perturbed_depth_acc, self.clean_mpjpe_mm, self.clean_depth_acc)
        return all(math.isfinite(v) for v in vals)

    def as_dict(self):
        return {
            "kind": self.kind, "params": self.params,
            "clean_mpjpe_mm": self.clean_mpjpe_mm, "perturbed_mpjpe_mm": self.perturbed_mpjpe_mm,
            "delta_mpjpe_mm": self.delta_mpjpe_mm, "delta_depth_acc": self.delta_depth_acc,
        }


def suite_from_json(text):
    return [PerturbationSpec(d["kind"], d.get("params", {})) for d in json.loads(text)]


def run_robustness(model, scenes, suite=DEFAULT_SUITE, max_group=8):
    """One row per perturbation: clean and perturbed metrics on the same scenes."""
    tau = model.config.encoder.visibility_threshold
    clean = evaluate(model, scenes, max_group)
    rows = []
    for spec in suite:
        bad = evaluate(model, [perturb(s, spec, tau) for s in scenes], max_group)
        rows.append(RobustnessRow(
            spec.kind, dict(spec.params),
            clean.mpjpe_mm, bad.mpjpe_mm, clean.depth_order_acc, bad.depth_order_acc,
        ))
    return rows


def format_rows(rows):
    lines = [f"{'perturbation':<22} {'clean':>9} {'perturbed':>10} {'delta_mm':>9}"]
    for r in rows:
        lines.append(f"{r.kind:<22} {r.clean_mpjpe_mm:>9.2f} {r.perturbed_mpjpe_mm:>10.2f} {r.delta_mpjpe_mm:>+9.3f}")
    return "\n".join(lines)


def embedding_shift(model, scene, spec):
    """Max absolute change of each modality embedding caused by ``spec``."""
    c = model.config
    idx = list(range(len(scene.persons)))
    bad = perturb(scene, spec, c.encoder.visibility_threshold)
    out = {}
    with dc.no_grad():
        a = build_embeddings(observations(scene, idx), model.nodeinit, c.encoder, modalities=c.modalities, use_tz=c.use_tz)
        b = build_embeddings(observations(bad, idx), model.nodeinit, c.encoder, modalities=c.modalities, use_tz=c.use_tz)
    for m, h in a.by_modality().items():
        out[m] = float(np.max(np.abs(h.data - b.by_modality()[m].data)))
    return out
