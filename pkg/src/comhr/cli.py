"""Command-line entry point: ``comhr <subcommand> [options] [--dotted.config.key value ...]``."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import diffcore as dc
from .container import save_tensor
from .harness.config import TrainConfig, flat_keys
from .scenegen import generate_scene, load_scene, save_scene


def _split_overrides(extra):
    """Turn leftover ``--key value`` pairs into a dotted-override dict."""
    known = flat_keys()
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise SystemExit(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise SystemExit(f"missing value for {tok}")
            value = extra[i + 1]
            i += 2
        key = key.replace("-", "_")
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
        out[key] = value
    return out


def _config(args, extra):
    overrides = _split_overrides(extra)
    if getattr(args, "config", None):
        return TrainConfig.load(args.config, overrides)
    return TrainConfig.resolve(None, overrides)


def _scenes(path, n_synthetic=0, persons=6, seed=0):
    if path:
        if os.path.isdir(path):
            manifests = sorted(glob.glob(os.path.join(path, "**", "manifest.json"), recursive=True))
        else:
            manifests = [path]
        if not manifests:
            raise SystemExit(f"no scenes found under {path}")
        return [load_scene(m) for m in manifests]
    return [generate_scene(persons, seed + i) for i in range(n_synthetic)]


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, extra):
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n_scenes):
        scene = generate_scene(args.persons, args.seed + i, spread=args.spread)
        save_scene(scene, os.path.join(args.out, f"scene_{i:04d}"))
    print(f"wrote {args.n_scenes} scenes to {args.out}")


def cmd_train(args, extra):
    from .harness.checkpoint import save_checkpoint
    from .harness.metrics import evaluate
    from .harness.train import loss_curves, train
    from .model import CoMHR

    cfg = _config(args, extra)
    scenes = _scenes(args.scenes, cfg.n_train_scenes, cfg.persons_per_scene, cfg.data_seed)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    model = CoMHR(cfg.model)
    logs = train(model, scenes, cfg, log_path=os.path.join(args.out, "log.ndjson"), steps=args.steps)
    save_checkpoint(model, os.path.join(args.out, "checkpoint"))
    report = evaluate(model, scenes, cfg.max_group)
    curves = loss_curves(logs)
    _print({"steps": len(logs), "train_metrics": report.as_dict(),
            "final_losses": {k: v[-1] for k, v in curves.items()}})


def cmd_eval(args, extra):
    from .harness.checkpoint import load_checkpoint
    from .harness.metrics import evaluate, per_joint_error, predict

    model = load_checkpoint(args.checkpoint)
    scenes = _scenes(args.scenes, args.synthetic, args.persons, args.seed)
    report = evaluate(model, scenes, args.max_group)
    _print(report.as_dict())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for i, scene in enumerate(scenes):
            pred = predict(model, scene, args.max_group)
            gt = np.stack([p.gt_joints3d for p in scene.persons])
            err = per_joint_error(pred["joints3d"], gt)
            base = os.path.join(args.out, f"scene_{i:04d}")
            for key in ("joints3d", "pose6d", "shape", "camera"):
                save_tensor(f"{base}_{key}.cmhr", pred[key])
            summary = {
                "seed": scene.seed,
                "persons": [
                    {"id": p.id, "pose6d": pred["pose6d"][j].tolist(), "shape": pred["shape"][j].tolist(),
                     "camera": pred["camera"][j].tolist(), "depth": float(pred["depth"][j]),
                     "joint_errors_mm": (err[j] * 1000.0).tolist()}
                    for j, p in enumerate(scene.persons)
                ],
            }
            with open(f"{base}_summary.json", "w") as fh:
                json.dump(summary, fh, indent=2)


def cmd_gradcheck(args, extra):
    from .gradsuite import CASES, run_suite

    names = list(CASES) if args.op == "all" else [args.op]
    for n in names:
        if n not in CASES:
            raise SystemExit(f"unknown op {n!r}; choose from: all, {', '.join(CASES)}")
    ok = True
    for s in run_suite(names, args.instances, args.seed, args.h, args.tol):
        status = "PASS" if s.passed(args.tol) else "FAIL"
        ok &= status == "PASS"
        print(f"{status} {s.name:<20} max rel err {s.worst:.3e}  checked {s.checked}  "
              f"skipped {s.skipped}  {s.seconds:.2f}s")
    return 0 if ok else 1


def cmd_graph(args, extra):
    from .harness.checkpoint import load_checkpoint
    from .harness.partition import partition_subgroups
    from .hypertopo import build_topology
    from .model import CoMHR, ModelConfig
    from .nodeinit import build_embeddings, observations

    scene = load_scene(args.scene) if args.scene else generate_scene(args.persons, args.seed)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else CoMHR(ModelConfig(K=args.K or 4))
    c = model.config
    os.makedirs(args.out, exist_ok=True)
    lines = []
    with dc.no_grad():
        for g, group in enumerate(partition_subgroups(scene, args.max_group, c.encoder.visibility_threshold)):
            idx = list(group.indices)
            emb = build_embeddings(observations(scene, idx, c.encoder.ingest), model.nodeinit, c.encoder,
                                   modalities=c.modalities, use_tz=c.use_tz)
            topo = build_topology(emb.h_agg, args.K or c.K)
            save_tensor(os.path.join(args.out, f"group{g:03d}_A.cmhr"), topo.A)
            save_tensor(os.path.join(args.out, f"group{g:03d}_H.cmhr"), topo.H)
            ids = [scene.persons[i].id for i in idx]
            lines.append(f"group {g}: persons {ids}")
            for e, members in enumerate(topo.neighbors):
                lines.append(f"  edge {ids[e]}: " + " ".join(str(ids[m]) for m in members))
    text = "\n".join(lines)
    with open(os.path.join(args.out, "adjacency.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)


def cmd_ablate(args, extra):
    from .harness.ablation import ABLATION_ROWS, run_ablation, row_from_dict

    cfg = _config(args, extra)
    rows = ABLATION_ROWS
    if args.grid:
        with open(args.grid) as fh:
            rows = [row_from_dict(d) for d in json.load(fh)]
    table = run_ablation(cfg, rows, seeds=tuple(range(args.seeds)), steps=args.steps, n_val=args.n_val)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table.to_json())


def cmd_robust(args, extra):
    from .harness.checkpoint import load_checkpoint
    from .harness.robustness import DEFAULT_SUITE, format_rows, run_robustness, suite_from_json
    from .model import CoMHR, ModelConfig

    model = load_checkpoint(args.checkpoint) if args.checkpoint else CoMHR(ModelConfig())
    suite = DEFAULT_SUITE
    if args.suite:
        with open(args.suite) as fh:
            suite = suite_from_json(fh.read())
    scenes = _scenes(args.scenes, args.synthetic, args.persons, args.seed)
    rows = run_robustness(model, scenes, suite, args.max_group)
    print(format_rows(rows))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([r.as_dict() for r in rows], fh, indent=2)


def cmd_bench(args, extra):
    from .harness.bench import bench_scaling
    from .model import CoMHR, ModelConfig

    sizes = tuple(int(s) for s in args.sizes.split(","))
    table = bench_scaling(CoMHR(ModelConfig()), sizes, seed=args.seed, repeats=args.repeats)
    print(table)


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="comhr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="write synthetic scenes to disk")
    s.add_argument("--out", required=True)
    s.add_argument("--n-scenes", type=int, default=4)
    s.add_argument("--persons", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spread", type=float, default=1.0)
    s.set_defaults(fn=cmd_gen)

    s = sub.add_parser("train", help="train a model; extra --key value pairs override the config")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", help="scene directory (default: synthetic scenes from the config)")
    s.add_argument("--steps", type=int, help="stop after this many steps instead of full epochs")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scenes")
    s.add_argument("--synthetic", type=int, default=8, help="number of synthetic scenes when --scenes is absent")
    s.add_argument("--persons", type=int, default=6)
    s.add_argument("--seed", type=int, default=100_000)
    s.add_argument("--max-group", type=int, default=8)
    s.add_argument("--out", help="directory for per-scene prediction containers and JSON summaries")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    s.add_argument("--op", default="all", help="case name, 'end_to_end', or 'all'")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--h", type=float, default=1e-3)
    s.add_argument("--instances", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("graph", help="dump affinity A and incidence H per subgroup")
    s.add_argument("--scene", help="scene manifest (default: a synthetic scene)")
    s.add_argument("--persons", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint")
    s.add_argument("--K", type=int, default=0, help="hyperedge size (default: the model's K)")
    s.add_argument("--max-group", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    s.add_argument("--config")
    s.add_argument("--grid", help="JSON list of rows {name, modalities, use_tz, contrastive}")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--steps", type=int)
    s.add_argument("--n-val", type=int, default=16)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("robust", help="clean vs perturbed evaluation")
    s.add_argument("--checkpoint")
    s.add_argument("--suite", help="JSON list of {kind, params}")
    s.add_argument("--scenes")
    s.add_argument("--synthetic", type=int, default=8)
    s.add_argument("--persons", type=int, default=6)
    s.add_argument("--seed", type=int, default=100_000)
    s.add_argument("--max-group", type=int, default=8)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_robust)

    s = sub.add_parser("bench", help="reasoning-stage scaling benchmark")
    s.add_argument("--sizes", default="8,40,80,200")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=5)
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command not in ("train", "ablate"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    return args.fn(args, extra) or 0


if __name__ == "__main__":
    sys.exit(main())
