"""Tests for the command-line interface and its exit codes."""

from __future__ import annotations

import json
from pathlib import Path

from fedlfd.cli import main
from fedlfd.harness import checkpoint_path, metrics_path

TINY = {
    "scenario": {
        "teachers": 2,
        "initial_sessions": 2,
        "sessions_per_round": 1,
        "samples_per_session": 3,
        "session_length_range": [6, 10],
    },
    "model": {"representation_dim": 3, "profile_hidden_dim": 3, "profile_code_dim": 2},
    "training": {
        "rounds": 2,
        "local_epochs": 2,
        "lstm_epochs": 8,
        "profile_epochs": 5,
        "profile_refresh_epochs": 1,
        "eval_samples": 64,
    },
    "seeds": [0, 1],
    "strategies": ["fedavg", "user_weighted"],
}


def write_config(tmp_path, **overrides) -> Path:
    data = json.loads(json.dumps(TINY))
    data.update(overrides)
    data.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


def test_validate_ok_echoes_defaults(tmp_path, capsys):
    path = write_config(tmp_path)
    assert main(["validate", str(path)]) == 0
    out = capsys.readouterr().out
    assert "config valid" in out
    assert "default applied" in out


def test_validate_bad_config_exit_1(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"global_learning_rate": -1}}))
    assert main(["validate", str(path)]) == 1
    assert "global_learning_rate" in capsys.readouterr().err


def test_validate_unparseable_config_exit_1(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == 1
    assert "line" in capsys.readouterr().err


def test_run_compare_resume_flow(tmp_path):
    config_path = write_config(tmp_path)
    assert main(["run", str(config_path), "--quiet"]) == 0
    out = tmp_path / "out"
    assert (out / "summary.txt").exists()
    assert main(["compare", str(out), "--quiet"]) == 0
    assert (out / "comparison.txt").exists()
    assert (out / "comparison_curves.csv").exists()
    assert (out / "loss_curves.png").exists()
    assert (out / "final_losses.png").exists()
    # Resume of a completed cell is a quiet no-op.
    assert main(["resume", str(checkpoint_path(out, 0, "fedavg")), "--quiet"]) == 0


def test_run_seed_offset_and_out_override(tmp_path):
    config_path = write_config(tmp_path, seeds=[0], strategies=["fedavg"])
    other = tmp_path / "other"
    assert main(["run", str(config_path), "--quiet", "--seed-offset", "5", "--out", str(other)]) == 0
    assert metrics_path(other, 5, "fedavg").exists()
    assert not metrics_path(other, 0, "fedavg").exists()


def test_compare_without_enough_strategies_exit_1(tmp_path, capsys):
    config_path = write_config(tmp_path, strategies=["fedavg"], seeds=[0, 1])
    assert main(["run", str(config_path), "--quiet"]) == 0
    assert main(["compare", str(tmp_path / "out"), "--quiet"]) == 1
    assert "strategies" in capsys.readouterr().err


def test_compare_no_plots_flag(tmp_path):
    config_path = write_config(tmp_path)
    assert main(["run", str(config_path), "--quiet"]) == 0
    out = tmp_path / "out"
    assert main(["compare", str(out), "--quiet", "--no-plots"]) == 0
    assert not (out / "loss_curves.png").exists()


def test_resume_missing_checkpoint_exit_1(tmp_path, capsys):
    assert main(["resume", str(tmp_path / "nope.json"), "--quiet"]) == 1
    assert "checkpoint" in capsys.readouterr().err.lower()
