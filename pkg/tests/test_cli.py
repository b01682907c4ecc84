import json

import pytest

from lws.cli import main


@pytest.fixture
def config(tmp_path):
    cfg = {
        "dataset": {"type": "synthetic", "seed": 0, "n_tasks": 2, "groups": [0, 0], "input_dim": 4,
                    "n_classes": 3, "n_train": 20, "n_test": 30, "teacher_hidden": 5},
        "architecture": {"preset": "mlp", "hidden": [5]},
        "iterations": 4,
        "eval_interval": 2,
        "batch_size": 4,
        "lambda_pi": 4,
        "lambda_theta": 2,
        "K": 2,
        "repeats": 2,
        "out_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_train_then_evaluate(config, tmp_path, capsys):
    out = tmp_path / "single"
    assert main(["train", "--config", str(config), "--seed", "3", "--mode", "none", "--out", str(out)]) == 0
    final = json.loads((out / "final.json").read_text())
    assert final["mode"] == "no_sharing" and final["seed"] == 3
    assert (out / "metrics.csv").exists() and (out / "checkpoint.npz").exists()
    capsys.readouterr()
    assert main(["evaluate", "--config", str(config), "--out", str(out)]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["mean"] == pytest.approx(final["test_error"])


def test_compare_and_report(config, tmp_path, capsys):
    assert main(["compare", "--config", str(config)]) == 0
    text = capsys.readouterr().out
    assert "lws" in text and "p_vs_none" in text
    assert main(["report", "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "reports" / "table.txt").exists()


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert main(["train", "--config", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_data_error(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_exit_code_missing_checkpoint(config, tmp_path):
    assert main(["evaluate", "--config", str(config), "--out", str(tmp_path / "empty")]) == 2


def test_exit_code_all_runs_failed(config, monkeypatch, capsys):
    import lws.experiment

    def broken(*args, **kwargs):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(lws.experiment, "train", broken)
    assert main(["compare", "--config", str(config)]) == 3
    assert "diverged" in capsys.readouterr().err


def test_partial_failure_still_reports(config, monkeypatch, tmp_path):
    import lws.experiment

    real = lws.experiment.train

    def flaky(cfg, *args, **kwargs):
        if cfg.seed == 1:
            raise FloatingPointError("diverged")
        return real(cfg, *args, **kwargs)

    monkeypatch.setattr(lws.experiment, "train", flaky)
    assert main(["compare", "--config", str(config)]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    for entry in summary["modes"]:
        assert entry["n_runs"] == 1
        assert entry["failures"][0]["seed"] == 1
