"""Command line: subcommands, artifacts and exit codes."""

import json

import pytest

from irwgan import __version__
from irwgan.cli import METRIC_FIELDS, main
from irwgan.config import settings
from irwgan.synthdata import PRESETS, synth_experiment_config

QUICK = [
    "--set", "epochs=1",
    "--set", "decay_start_epoch=1",
    "--set", "iters_per_epoch=1",
    "--set", "batch_size=4",
    "--set", "micro_batch=4",
    "--set", "sample_grid_every=0",
]


@pytest.fixture
def trained_run(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--synth", "tiny", "--out", str(run), *QUICK]) == 0
    return run


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--synth", "tiny", "--out", str(out)]) == 0
    return out


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train", "--bogus"])
        assert info.value.code == 2
        assert "--bogus" in capsys.readouterr().err

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2


class TestTrain:
    def test_artifacts(self, trained_run, capsys):
        for name in ("manifest.json", "config.json", "log.csv", "checkpoints/ep1.ckpt", "weights_X.csv"):
            assert (trained_run / name).exists(), name
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["tool_version"] == __version__
        assert [d["size"] for d in manifest["datasets"]] == [18, 18]

    def test_override_reaches_config_file(self, tmp_path):
        assert main(["train", "--synth", "tiny", "--out", str(tmp_path), "--set", "lambda_ess=0", *QUICK]) == 0
        assert json.loads((tmp_path / "config.json").read_text())["lambda_ess"] == 0.0

    def test_unknown_override_key(self, tmp_path, capsys):
        code = main(["train", "--synth", "tiny", "--out", str(tmp_path), "--set", "lambda_foo=1"])
        assert code == 2
        assert "lambda_foo" in capsys.readouterr().err

    def test_invalid_override_value(self, tmp_path):
        assert main(["train", "--synth", "tiny", "--out", str(tmp_path), "--set", "micro_batch=3", *QUICK[:6]]) == 2

    def test_seed_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "seed", 9)
        assert main(["train", "--synth", "tiny", "--out", str(tmp_path / "env"), *QUICK]) == 0
        assert json.loads((tmp_path / "env" / "config.json").read_text())["seed"] == 9
        assert main(["train", "--synth", "tiny", "--out", str(tmp_path / "flag"), "--seed", "5", *QUICK]) == 0
        assert json.loads((tmp_path / "flag" / "config.json").read_text())["seed"] == 5

    def test_default_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "seed", None)
        monkeypatch.setattr(settings, "runs_dir", str(tmp_path))
        assert main(["train", "--synth", "tiny", *QUICK]) == 0
        assert (tmp_path / "train-seed0" / "log.csv").exists()

    def test_needs_data(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == 2

    def test_image_directories(self, synth_dir, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(synth_experiment_config(PRESETS["tiny"]).to_json())
        code = main([
            "train", "--data-x", str(synth_dir / "X"), "--data-y", str(synth_dir / "Y"),
            "--labels-x", str(synth_dir / "labels_X.csv"), "--out", str(tmp_path / "run"),
            "--config", str(config), *QUICK,
        ])
        assert code == 0
        assert (tmp_path / "run" / "weights_Y.json").exists()

    def test_resume_mid_run_continues_identically(self, tmp_path):
        two_epochs = [*QUICK, "--set", "epochs=2", "--set", "checkpoint_every=1"]
        assert main(["train", "--synth", "tiny", "--out", str(tmp_path / "straight"), *two_epochs]) == 0
        code = main([
            "train", "--synth", "tiny", "--out", str(tmp_path / "resumed"),
            "--resume", str(tmp_path / "straight" / "checkpoints" / "ep1.ckpt"),
        ])
        assert code == 0
        straight = (tmp_path / "straight" / "log.csv").read_text()
        assert (tmp_path / "resumed" / "log.csv").read_text() == straight
        assert len(straight.splitlines()) == 1 + 2
        assert json.loads((tmp_path / "resumed" / "config.json").read_text())["epochs"] == 2

    def test_resume_rejects_overrides(self, trained_run, tmp_path, capsys):
        code = main([
            "train", "--synth", "tiny", "--out", str(tmp_path / "more"),
            "--resume", str(trained_run / "checkpoints" / "ep1.ckpt"), "--set", "epochs=3",
        ])
        assert code == 2
        assert "--resume" in capsys.readouterr().err


class TestEval:
    def test_metrics(self, trained_run):
        assert main(["eval", "--run", str(trained_run), "--synth", "tiny", "--plot"]) == 0
        metrics = json.loads((trained_run / "metrics.json").read_text())
        assert set(METRIC_FIELDS) <= set(metrics)
        assert metrics["kid_x100"] == pytest.approx(100 * metrics["kid"])
        assert 0.0 <= metrics["accuracy"] <= 1.0
        assert set(metrics["directions"]) == {"x2y", "y2x"}
        for name in ("histogram_X.csv", "histogram_Y.csv", "histogram_X.png"):
            assert (trained_run / name).exists(), name

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--run", str(tmp_path), "--synth", "tiny"]) == 4

    def test_needs_test_data(self, trained_run):
        assert main(["eval", "--run", str(trained_run)]) == 2


class TestTranslate:
    def test_names_and_determinism(self, trained_run, synth_dir, tmp_path):
        for out in ("a", "b"):
            args = ["translate", "--run", str(trained_run), "--input", str(synth_dir / "X"), "--out", str(tmp_path / out)]
            assert main(args) == 0
        inputs = sorted(p.name for p in (synth_dir / "X").glob("*.png"))
        outputs = sorted(p.name for p in (tmp_path / "a").glob("*.png"))
        assert outputs == inputs
        for name in outputs:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_checkpoint(self, synth_dir, tmp_path):
        args = ["translate", "--run", str(tmp_path / "empty"), "--input", str(synth_dir / "X"), "--out", str(tmp_path / "o")]
        assert main(args) == 4

    def test_bad_input_directory(self, trained_run, tmp_path):
        args = ["translate", "--run", str(trained_run), "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
        assert main(args) == 5


class TestStudies:
    def test_synth_prints_probe(self, synth_dir, capsys):
        assert (synth_dir / "synth.json").exists()
        main(["synth", "--synth", "tiny", "--out", str(synth_dir)])
        assert "content probe accuracy" in capsys.readouterr().out

    def test_sweep_needs_two_values(self, tmp_path):
        assert main(["sweep-ess", "--values", "1", "--synth", "tiny", "--out", str(tmp_path)]) == 2

    def test_sweep_rejects_non_numbers(self, tmp_path):
        assert main(["sweep-ess", "--values", "a,b", "--synth", "tiny", "--out", str(tmp_path)]) == 2

    def test_sweep(self, tmp_path):
        assert main(["sweep-ess", "--values", "0,1", "--synth", "tiny", "--out", str(tmp_path), *QUICK]) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda_ess,ess_x,ess_y,beta_accuracy,fid"
        assert len(lines) == 3
        assert (tmp_path / "lambda_ess_0" / "metrics.json").exists()

    def test_diagnose(self, tmp_path):
        assert main(["diagnose", "--synth", "tiny", "--out", str(tmp_path), *QUICK]) == 0
        assert len((tmp_path / "probe.csv").read_text().splitlines()) == 3

    def test_stress(self, tmp_path):
        assert main(["stress", "--ratios", "0.5", "--synth", "tiny", "--out", str(tmp_path), *QUICK]) == 0
        assert len((tmp_path / "stress.csv").read_text().splitlines()) == 2
