"""CLI plumbing: subcommands, exit codes, artifacts, env overrides, resume."""

import json
import os
import re
import subprocess
import sys

import pytest

from hgnn.cli import main
from hgnn.reporting import read_grid_csv

FAST_TUNE = ["--trials", "2", "--epochs", "2", "--patience", "10"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synthetic log, schema, and encoded dataset shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--cases", "40", "--seed", "3", "--out", str(root)]) == 0
    assert main(["encode", "--data", str(root / "log.csv"),
                 "--schema", str(root / "schema.json"),
                 "--out", str(root / "enc.json"), "--seed", "1"]) == 0
    return root


def test_synth_writes_log_and_schema(workspace):
    assert (workspace / "log.csv").exists()
    schema = json.loads((workspace / "schema.json").read_text())
    assert schema["activity_column"] == "activity"


def test_encode_idempotent_same_bytes(workspace, tmp_path):
    out2 = tmp_path / "enc2.json"
    main(["encode", "--data", str(workspace / "log.csv"),
          "--schema", str(workspace / "schema.json"),
          "--out", str(out2), "--seed", "1"])
    assert out2.read_bytes() == (workspace / "enc.json").read_bytes()


def test_encode_missing_column_exit_2(workspace, tmp_path, capsys):
    bad_schema = tmp_path / "bad.json"
    doc = json.loads((workspace / "schema.json").read_text())
    doc["label_column"] = "not_a_column"
    bad_schema.write_text(json.dumps(doc))
    code = main(["encode", "--data", str(workspace / "log.csv"),
                 "--schema", str(bad_schema), "--out", str(tmp_path / "x.json")])
    assert code == 2
    assert "not_a_column" in capsys.readouterr().err


def test_encode_stats_prints_distribution(workspace, tmp_path, capsys):
    main(["encode", "--data", str(workspace / "log.csv"),
          "--schema", str(workspace / "schema.json"),
          "--out", str(tmp_path / "y.json"), "--seed", "1", "--stats"])
    out = capsys.readouterr().out
    assert "class class0" in out and "class class1" in out


def test_tune_writes_all_artifacts(workspace, tmp_path):
    out = tmp_path / "study"
    code = main(["tune", "--data", str(workspace / "enc.json"),
                 "--arch", "one", "--op", "gcn", "--seed", "7",
                 "--out", str(out)] + FAST_TUNE)
    assert code == 0
    lines = (out / "trials.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    config = json.loads((out / "best_config.json").read_text())
    assert config["model"]["architecture"] == "one_level"
    dump = (out / "best_config.txt").read_text()
    assert dump.startswith("Best hyperparameters found were:\n")
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"tuned", "retrained", "best_trial", "policy"} <= set(metrics)


def test_tune_resume_extends_to_requested_count(workspace, tmp_path):
    out = tmp_path / "study_r"
    main(["tune", "--data", str(workspace / "enc.json"), "--arch", "one",
          "--op", "gcn", "--seed", "7", "--out", str(out)] + FAST_TUNE)
    code = main(["tune", "--data", str(workspace / "enc.json"), "--arch", "one",
                 "--op", "gcn", "--seed", "7", "--out", str(out), "--resume",
                 "--trials", "4", "--epochs", "2", "--patience", "10"])
    assert code == 0
    lines = (out / "trials.jsonl").read_text().strip().splitlines()
    assert [json.loads(l)["trial_index"] for l in lines] == [0, 1, 2, 3]


def test_tune_determinism_byte_identical_trials(workspace, tmp_path):
    blobs = []
    for name in ("d1", "d2"):
        out = tmp_path / name
        main(["tune", "--data", str(workspace / "enc.json"), "--arch", "two",
              "--op", "sage", "--seed", "11", "--out", str(out)] + FAST_TUNE)
        blobs.append((out / "trials.jsonl").read_bytes())
    assert blobs[0] == blobs[1]


def test_train_runs_saved_config(workspace, tmp_path):
    study = tmp_path / "study_t"
    main(["tune", "--data", str(workspace / "enc.json"), "--arch", "one",
          "--op", "gcn", "--seed", "7", "--out", str(study)] + FAST_TUNE)
    metrics_path = tmp_path / "m.json"
    code = main(["train", "--data", str(workspace / "enc.json"),
                 "--config", str(study / "best_config.json"),
                 "--epochs", "3", "--seed", "2", "--out", str(metrics_path)])
    assert code == 0
    doc = json.loads(metrics_path.read_text())
    assert {"accuracy", "weighted_f1", "mean_loss", "loss_std"} <= set(doc)
    assert doc["best_epoch"] <= 3  # --epochs override respected


def test_env_override_trials(workspace, tmp_path):
    env = dict(os.environ, HGNN_TRIALS="1", HGNN_EPOCHS="2", HGNN_PATIENCE="5")
    out = tmp_path / "env_study"
    proc = subprocess.run(
        [sys.executable, "-m", "hgnn.cli", "tune",
         "--data", str(workspace / "enc.json"), "--arch", "one", "--op", "gin",
         "--seed", "1", "--out", str(out)],
        env=env, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert len((out / "trials.jsonl").read_text().strip().splitlines()) == 1


@pytest.fixture(scope="module")
def grid_out(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("grid_artifacts") / "grid"
    code = main(["grid", "--data", str(workspace / "enc.json"),
                 "--trials", "1", "--epochs", "2", "--patience", "10",
                 "--seed", "5", "--out", str(out)])
    assert code == 0
    return out


def test_grid_csv_and_figures(grid_out):
    csv_lines = (grid_out / "grid.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 25  # header + 24 cells
    assert csv_lines[0] == "architecture,operator,accuracy,weighted_f1,mean_loss,loss_std"
    assert (grid_out / "heatmap.svg").exists()
    for op in ("gcn", "graph", "sage", "tag", "cheb", "gin"):
        assert (grid_out / f"radar_{op}.svg").exists()


def test_heatmap_values_equal_csv_rounded(grid_out):
    cells = read_grid_csv(grid_out / "grid.csv")
    svg = (grid_out / "heatmap.svg").read_text()
    shown = re.findall(r">([0-9]\.[0-9]{3})</text>", svg)
    expected = [f"{cells[k]['accuracy']:.3f}" for k in sorted(cells) if cells[k]]
    assert sorted(shown) == sorted(expected)
    assert len(shown) == 24


def test_report_regenerates_identical_figures(grid_out, tmp_path):
    rep = tmp_path / "rep"
    code = main(["report", "--grid-csv", str(grid_out / "grid.csv"), "--out", str(rep)])
    assert code == 0
    assert (rep / "heatmap.svg").read_bytes() == (grid_out / "heatmap.svg").read_bytes()
    assert (rep / "radar_gin.svg").read_bytes() == (grid_out / "radar_gin.svg").read_bytes()


def test_grid_total_budget_divides(workspace, tmp_path):
    out = tmp_path / "grid4"
    code = main(["grid", "--data", str(workspace / "enc.json"),
                 "--total-budget", "24", "--epochs", "2", "--patience", "10",
                 "--seed", "5", "--out", str(out), "--trials", "99"])
    assert code == 0
    lines = (out / "cells" / "one_level__gcn" / "trials.jsonl").read_text().strip().splitlines()
    assert len(lines) == 1  # 24 // 24 = 1 trial per cell


def test_unknown_arch_exits_with_message(workspace):
    with pytest.raises(SystemExit):
        main(["tune", "--data", str(workspace / "enc.json"), "--arch", "bogus",
              "--op", "gcn", "--out", "/tmp/x"] + FAST_TUNE)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_grid_exit_4_when_every_cell_fails(workspace, tmp_path):
    # poison the cached dataset with non-finite features: every trial fails
    doc = json.loads((workspace / "enc.json").read_text())
    for g in doc["train"] + doc["val"]:
        g["x"] = [[float("1e400") for _ in row] for row in g["x"]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code = main(["grid", "--data", str(bad), "--trials", "1", "--epochs", "1",
                 "--patience", "5", "--seed", "1", "--out", str(tmp_path / "g")])
    assert code == 4
