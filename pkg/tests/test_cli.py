import json

import pytest

from comhr.cli import main
from comhr.container import load_tensor


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(root / "scenes"), "--n-scenes", "2", "--persons", "3", "--seed", "5"]) == 0
    assert main(["train", "--out", str(root / "run"), "--scenes", str(root / "scenes"), "--steps", "2",
                 "--batch_scenes", "2", "--lr", "1e-3", "--model.head_hidden", "16"]) == 0
    return root


def test_gen_writes_manifests(workdir):
    assert sorted(p.name for p in (workdir / "scenes").iterdir()) == ["scene_0000", "scene_0001"]


def test_train_outputs(workdir, capsys):
    run = workdir / "run"
    log = (run / "log.ndjson").read_text().splitlines()
    assert len(log) == 2 and json.loads(log[0])["step"] == 1
    assert json.loads((run / "config.json").read_text())["model"]["head_hidden"] == 16
    assert (run / "checkpoint" / "index.json").exists()


def test_eval_exports(workdir, capsys):
    out = workdir / "pred"
    assert main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint"), "--scenes", str(workdir / "scenes"),
                 "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_persons"] == 6
    assert load_tensor(out / "scene_0000_joints3d.cmhr").shape == (3, 24, 3)
    summary = json.loads((out / "scene_0001_summary.json").read_text())
    assert len(summary["persons"]) == 3 and len(summary["persons"][0]["joint_errors_mm"]) == 24


def test_gradcheck_single_op(capsys):
    assert main(["gradcheck", "--op", "cross_loss", "--instances", "3"]) == 0
    assert capsys.readouterr().out.startswith("PASS cross_loss")


def test_gradcheck_unknown_op():
    with pytest.raises(SystemExit):
        main(["gradcheck", "--op", "nope"])


def test_graph_dump(tmp_path, capsys):
    assert main(["graph", "--persons", "5", "--seed", "2", "--K", "2", "--out", str(tmp_path)]) == 0
    H = load_tensor(tmp_path / "group000_H.cmhr")
    assert H.shape == (5, 5) and (H.sum(axis=0) == 2).all()
    assert (tmp_path / "adjacency.txt").read_text().startswith("group 0: persons")


def test_robust_with_suite(workdir, tmp_path, capsys):
    suite = tmp_path / "suite.json"
    suite.write_text(json.dumps([{"kind": "depth-hole", "params": {"fraction": 0.6}},
                                 {"kind": "sensor-noise", "params": {"sigma": 0.0}}]))
    out = tmp_path / "rows.json"
    assert main(["robust", "--checkpoint", str(workdir / "run" / "checkpoint"), "--suite", str(suite),
                 "--scenes", str(workdir / "scenes"), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert [r["kind"] for r in rows] == ["depth-hole", "sensor-noise"]
    assert rows[1]["delta_mpjpe_mm"] == 0.0


def test_ablate_grid(tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"name": "rgb-only", "modalities": ["rgb"], "use_tz": False, "contrastive": False}]))
    out = tmp_path / "table.json"
    assert main(["ablate", "--grid", str(grid), "--seeds", "1", "--steps", "1", "--n-val", "1", "--out", str(out),
                 "--n_train_scenes", "2", "--persons_per_scene", "3", "--model.head_hidden", "8"]) == 0
    table = json.loads(out.read_text())
    assert len(table) == 1 and len(table[0]["mpjpe_mm"]) == 1


def test_bench_small(capsys):
    assert main(["bench", "--sizes", "8,16", "--repeats", "1"]) == 0
    assert "fit:" in capsys.readouterr().out


def test_unknown_override_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["train", "--out", str(tmp_path), "--not_a_key", "3"])


def test_stray_arguments_rejected():
    with pytest.raises(SystemExit):
        main(["bench", "--lr", "1"])
