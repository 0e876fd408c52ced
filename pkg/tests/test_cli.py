import json
import numpy as np
import pytest

from ccfusion.cli import main, read_bias, read_positions
from ccfusion.dataset import read_dataset, write_dataset

TRAIN = ["--epochs", "1", "--pairs-per-epoch", "256", "--window", "20", "--icp-stride", "4"]
PSO = ["--swarm", "20", "--iterations", "20"]


def run(*argv):
    return main([str(a) for a in argv])


def pipeline():
    """Small version of the full scripted run, inside the current directory."""
    assert run("simulate", "--out", "train", "--n-steps", 80, "--seed", 42) == 0
    assert run("simulate", "--out", "test", "--n-steps", 40, "--seed", 7, "--no-laser") == 0
    assert run("simulate", "--out", "test3", "--n-steps", 30, "--seed", 7, "--no-laser",
               "--trp-set", "baseline") == 0
    assert run("train", "--data", "train", "--out", "model", "--seed", 1, *TRAIN) == 0
    assert run("estimate-offset", "--model", "model", "--data", "train", "--out", "offset",
               *PSO) == 0
    assert run("localize", "--model", "model", "--bias", "offset", "--data", "test",
               "--out", "loc") == 0
    assert run("evaluate", "--positions", "loc/positions.csv", "--data", "test",
               "--out", "eval", "--k-curve", 1, 3) == 0
    assert run("baseline-tdoa", "--data", "test3", "--out", "tdoa", *PSO) == 0
    assert run("diagnose-power", "--data", "test", "--out", "power", "--n-triples", 500) == 0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    roots = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    mp = pytest.MonkeyPatch()
    try:
        for root in roots:
            mp.chdir(root)
            pipeline()
    finally:
        mp.undo()
    return roots


def test_pipeline_outputs(runs):
    root = runs[0]
    report = json.loads((root / "eval" / "report.json").read_text())
    assert {"ct", "tw", "ce90", "mean_err", "k_neighbors", "n_steps"} <= set(report)
    assert [c["k"] for c in report["k_curve"]] == [1, 3]
    assert report["n_steps"] == 40
    bias = read_bias(root / "offset")
    assert bias.shape == (3,) and bias[2] == 0
    assert json.loads((root / "offset" / "bias.json").read_text())["shape"] == [3]
    pos = read_positions(root / "loc" / "positions.csv")
    assert pos.shape == (40, 3) and np.all(pos[:, 2] == 1.5)
    assert read_positions(root / "tdoa" / "positions.csv").shape == (30, 3)
    loss = (root / "model" / "loss.csv").read_text().splitlines()
    assert loss[0] == "step,loss" and len(loss) == 5
    assert 0 <= json.loads((root / "power" / "power.json").read_text())["rate"] <= 1
    for sub in ("train", "model", "offset", "loc", "eval", "tdoa"):
        assert json.loads((root / sub / "config.json").read_text())["seed"] is not None


def test_every_output_byte_identical(runs):
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    assert len(files) > 20
    for rel in files:
        assert (runs[0] / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel


def test_resolved_config_printed(runs, capsys, monkeypatch):
    monkeypatch.chdir(runs[0])
    run("localize", "--model", "model", "--data", "test", "--out", "loc0")
    out = capsys.readouterr().out
    assert json.loads(out)["command"] == "localize"


def test_evaluate_without_ground_truth(runs, capsys, tmp_path):
    ds = read_dataset(runs[0] / "test")
    write_dataset(ds.without_ground_truth(), tmp_path / "blind")
    assert run("evaluate", "--positions", runs[0] / "loc" / "positions.csv",
               "--data", tmp_path / "blind", "--out", tmp_path / "bad") == 2
    assert "ground truth" in capsys.readouterr().err


def test_train_without_laser(runs, capsys, tmp_path):
    assert run("train", "--data", runs[0] / "test", "--out", tmp_path, *TRAIN) == 2
    assert "laser" in capsys.readouterr().err
    assert run("train", "--data", runs[0] / "test", "--out", tmp_path, "--lambda", 0,
               *TRAIN) == 0
    assert (tmp_path / "model.ccfnet").exists()


def test_baseline_needs_three_trps(runs, capsys, tmp_path):
    assert run("baseline-tdoa", "--data", runs[0] / "test", "--out", tmp_path) == 2
    assert "3 TRPs" in capsys.readouterr().err


def test_missing_dataset(capsys, tmp_path):
    assert run("localize", "--model", tmp_path, "--data", tmp_path / "nope",
               "--out", tmp_path) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_scene_config_override(tmp_path, capsys):
    cfg = tmp_path / "scene.json"
    cfg.write_text(json.dumps({"room": [[0, 0], [8, 0], [8, 6], [0, 6]],
                               "trps": [[1, 5, 3], [7, 5, 3]],
                               "baseline_trps": [[1, 5, 3], [7, 5, 3], [4, 1, 3]]}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "d", "--n-steps", 20) == 0
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert man["trp_positions"] == [[1, 5, 3], [7, 5, 3]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trps": [[50, 50, 3], [7, 5, 3]]}))
    assert run("simulate", "--config", bad, "--out", tmp_path / "e", "--n-steps", 20) == 2
