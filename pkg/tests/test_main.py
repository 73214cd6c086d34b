"""Tests for the command-line subcommands and their exit codes."""

import json

import numpy as np
import pytest
from rich.console import Console

import main as main_module
import tensor as T
from checkpoint import capture, save_checkpoint
from config import RunConfig
from main import check_reduced_model, cmd_eval, cmd_gradcheck, cmd_report, cmd_train, main, parse_args
from model import expected_parameter_count
from schedule import TrainReport

QUICK_SCHEDULE = "backbone:0.001:1,mixture:0.01:1,backbone:0.001:1"
# raw weights whose normalized rows print as the fashion_mnist reference rows
FASHION_W = ((0.5178, 0.1470, 0.3352), (0.29074, 0.70014, 0.00912), (0.1221, 0.0410, 0.8369))


def _quick_config(data_root, out_dir, **overrides) -> RunConfig:
    values = dict(data_root=data_root, out_dir=out_dir, schedule=QUICK_SCHEDULE, batch_size=16, curve_points=101)
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def trained_run(data_root, tmp_path):
    cfg = _quick_config(data_root, tmp_path / "run")
    assert cmd_train(cfg) == 0
    return cfg


class TestTrain:

    def test_writes_every_artifact(self, trained_run):
        out = trained_run.out_dir
        for name in ("metrics.csv", "weight_table.txt", "leaky_fits.json", "report.json", "config_echo.txt"):
            assert (out / name).exists(), name
        for k in (1, 2, 3):
            assert (out / "checkpoints" / f"phase{k}.ckpt").exists()
        for layer in ("act1", "act2", "act3"):
            for lo, hi in ("-3", "3"), ("-1", "1"), ("-10", "10"), ("-100", "100"):
                assert (out / "curves" / f"{layer}_{lo}_{hi}.csv").exists()
                assert (out / "curves" / f"{layer}_{lo}_{hi}.svg").exists()
        assert not (out / ".lock").exists()

        report = TrainReport.model_validate_json((out / "report.json").read_text())
        assert [p.trainable_group for p in report.phases] == ["backbone", "mixture", "backbone"]
        assert sorted(report.final_p) == ["act1", "act2", "act3"]
        assert len(json.loads((out / "leaky_fits.json").read_text())) == 3
        assert "schedule = backbone:0.001:1,mixture:0.01:1,backbone:0.001:1" in (out / "config_echo.txt").read_text()

    def test_missing_data(self, tmp_path, caplog):
        code = cmd_train(_quick_config(tmp_path / "nothing", tmp_path / "run"))
        assert code == 3
        assert "train-images-idx3-ubyte" in caplog.text
        assert "Loading dataset failed" in caplog.text

    def test_busy_directory(self, data_root, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / ".lock").write_text("123")
        assert cmd_train(_quick_config(data_root, out)) == 2
        assert (out / ".lock").exists()


class TestEvalAndReport:

    def test_eval(self, trained_run, tmp_path):
        cfg = trained_run.model_copy(update={"out_dir": tmp_path / "eval"})
        assert cmd_eval(cfg, trained_run.out_dir / "checkpoints" / "phase3.ckpt") == 0
        assert (tmp_path / "eval" / "config_echo.txt").exists()

    def test_report(self, trained_run, tmp_path):
        cfg = RunConfig(out_dir=tmp_path / "report", curve_points=51)
        code = cmd_report(trained_run.out_dir / "checkpoints" / "phase2.ckpt", [(-5.0, 5.0)], cfg)
        assert code == 0
        out = tmp_path / "report"
        assert (out / "curves" / "act2_-5_5.csv").exists()
        assert (out / "weight_table.txt").read_text().splitlines()[0].split() == ["layer", "P1", "P2", "P3"]

    def test_report_missing_checkpoint(self, tmp_path):
        assert cmd_report(tmp_path / "absent.ckpt", cfg=RunConfig(out_dir=tmp_path / "report")) == 3

    def test_report_prints_fashion_rows(self, tiny_model, tmp_path, capsys, monkeypatch):
        monkeypatch.setattr(main_module, "console", Console(width=160))
        for w, values in zip(tiny_model.mixtures(), FASHION_W):
            w.w.data[:] = values
        ckpt = save_checkpoint(tmp_path / "fashion.ckpt", capture(tiny_model, dataset="fashion_mnist"))
        assert cmd_report(ckpt, [(-3.0, 3.0)], RunConfig(out_dir=tmp_path / "report", curve_points=51)) == 0

        expected = [["act1", "0.5178", "0.1470", "0.3352"],
                    ["act2", "0.2907", "0.7001", "0.0091"],
                    ["act3", "0.1221", "0.0410", "0.8369"]]
        lines = (tmp_path / "report" / "weight_table.txt").read_text().splitlines()
        assert [line.split() for line in lines[1:]] == expected
        printed = capsys.readouterr().out
        for row in expected:
            assert all(value in printed for value in row[1:])

    def test_negative_ranges_through_main(self, tiny_model, tmp_path):
        ckpt = save_checkpoint(tmp_path / "model.ckpt", capture(tiny_model, dataset="mnist"))
        out = tmp_path / "report"
        code = main(["report", "--checkpoint", str(ckpt), "--range", "-3:3", "--range", "-100:100", "--out", str(out)])
        assert code == 0
        for layer in ("act1", "act2", "act3"):
            assert (out / "curves" / f"{layer}_-3_3.csv").exists()
            assert (out / "curves" / f"{layer}_-100_100.csv").exists()
        assert not (out / "curves" / "act1_-1_1.csv").exists()
        assert "curve_ranges = -3.0:3.0,-100.0:100.0" in (out / "config_echo.txt").read_text()


class TestGradcheck:

    def test_reduced_model_passes(self, tmp_path):
        assert cmd_gradcheck("tiny", 42, RunConfig(out_dir=tmp_path)) == 0
        assert (tmp_path / "config_echo.txt").exists()

    @pytest.mark.parametrize("seed", range(8))
    def test_passes_across_seeds(self, seed, tmp_path):
        assert cmd_gradcheck("tiny", seed, RunConfig(out_dir=tmp_path, seed=seed)) == 0

    def test_reports_central_and_refined(self):
        result = check_reduced_model("tiny", 42)
        assert result.refined <= result.central
        assert result.refined <= 1e-4
        assert result.elements == expected_parameter_count((2, 4), 16)

    def test_corrupted_backward_fails(self, tmp_path, monkeypatch):
        monkeypatch.setattr(T, "_sin_grad", lambda x, g: -g * np.cos(x))
        assert cmd_gradcheck("tiny", 42, RunConfig(out_dir=tmp_path)) == 5

    def test_unknown_size(self, tmp_path):
        assert cmd_gradcheck("huge", 42, RunConfig(out_dir=tmp_path)) == 2

    def test_deterministic(self):
        assert check_reduced_model("tiny", 1) == check_reduced_model("tiny", 1)


class TestParser:

    def test_repeatable_range(self):
        args = parse_args(["report", "--checkpoint", "x.ckpt", "--range", "-1:1", "--range", "-5:5"])
        assert args.ranges == ["-1:1", "-5:5"]

    def test_range_with_equals(self):
        assert parse_args(["train", "--range=-10:10"]).ranges == ["-10:10"]

    def test_flags(self):
        args = parse_args(["train", "--subset-train", "2000", "--epochs-scale", "0.2", "--out", "o"])
        assert (args.subset_train, args.epochs_scale, args.out_dir) == (2000, 0.2, "o")

    @pytest.mark.parametrize("argv", [
        ["train", "--epochs-scale", "0"],
        ["train", "--range", "5:1"],
        ["gradcheck", "--log-level", "chatty"],
    ])
    def test_invalid_configuration_exits_2(self, argv, tmp_path):
        assert main(argv + ["--out", str(tmp_path)]) == 2


def test_desk_scale_mnist(mnist_root, tmp_path):
    cfg = RunConfig(data_root=mnist_root, out_dir=tmp_path, subset_train=2000, subset_test=1000, epochs_scale=0.2)
    assert cmd_train(cfg) == 0
    report = TrainReport.model_validate_json((tmp_path / "report.json").read_text())
    assert [p.epochs for p in report.phases] == [2, 2, 2]
    assert report.final_accuracy >= 0.85
