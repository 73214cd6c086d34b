"""Tests for the three-cycle schedule: freezing, metrics, checkpoints and determinism."""

import csv

import numpy as np
import pytest
from pydantic import ValidationError

from checkpoint import encode_checkpoint, load_checkpoint
from data_loader import Dataset, load_dataset, make_batches, take_subset
from errors import NumericError
from mixture import EPS
from model import PARAMETER_GROUPS, build_model, model_forward, set_trainable, snapshot
from optim import AdamState
from schedule import (
    METRICS_HEADER,
    MetricsLog,
    PhaseConfig,
    Schedule,
    TrainReport,
    accuracy_from_logits,
    default_schedule,
    evaluate,
    run_phase,
    run_schedule,
    train_step,
)
from tensor import Tensor, softmax_cross_entropy

SHORT = Schedule(phases=[
    PhaseConfig(trainable_group="backbone", lr=1e-3, epochs=1),
    PhaseConfig(trainable_group="mixture", lr=1e-2, epochs=2),
    PhaseConfig(trainable_group="backbone", lr=1e-3, epochs=1),
])


def _mean_loss(m, d: Dataset, batch_size: int = 250) -> float:
    total = 0.0
    for start in range(0, len(d), batch_size):
        images = Tensor(d.images.data[start:start + batch_size])
        labels = d.labels[start:start + batch_size]
        total += softmax_cross_entropy(model_forward(m, images), labels).item() * len(labels)
    return total / len(d)


@pytest.fixture
def splits(data_root):
    return load_dataset(data_root, "mnist", "train"), load_dataset(data_root, "mnist", "test")


class TestScheduleConfig:

    def test_default_three_cycles(self):
        s = default_schedule()
        assert [(p.trainable_group, p.lr, p.epochs) for p in s.phases] == [
            ("backbone", 1e-3, 10), ("mixture", 1e-2, 10), ("backbone", 1e-3, 10),
        ]
        assert s.phases[1].frozen_group == "backbone"

    def test_scaled(self):
        assert [p.epochs for p in default_schedule().scaled(0.2).phases] == [2, 2, 2]
        assert [p.epochs for p in default_schedule().scaled(0.01).phases] == [1, 1, 1]

    @pytest.mark.parametrize("kwargs", [
        {"trainable_group": "backbone", "lr": 0.0, "epochs": 1},
        {"trainable_group": "backbone", "lr": 1e-3, "epochs": 0},
        {"trainable_group": "head", "lr": 1e-3, "epochs": 1},
    ])
    def test_invalid_phase(self, kwargs):
        with pytest.raises(ValidationError):
            PhaseConfig(**kwargs)

    def test_empty_schedule(self):
        with pytest.raises(ValidationError):
            Schedule(phases=[])


class TestAccuracy:

    def test_ties_go_to_lower_class(self):
        logits = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
        assert accuracy_from_logits(logits, [0, 1]) == 1.0
        assert accuracy_from_logits(logits, [1, 2]) == 0.0

    def test_hand_counted_fixture(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, size=20)
        predicted = labels.copy()
        predicted[[1, 4, 9, 15, 16]] = (predicted[[1, 4, 9, 15, 16]] + 1) % 3
        logits = np.eye(3)[predicted]
        assert accuracy_from_logits(logits, labels) == pytest.approx(15 / 20)

    def test_bias_only_model(self, tiny_model, splits):
        _, test = splits
        tiny_model.fc2_weight.data[:] = 0.0
        tiny_model.fc2_bias.data[:] = np.arange(10) == 3
        test.labels[:] = 3
        assert evaluate(tiny_model, test) == 1.0

    def test_untrained_model_is_near_chance(self):
        rng = np.random.default_rng(1)
        d = Dataset(Tensor(rng.uniform(size=(1000, 1, 28, 28))), rng.integers(0, 10, size=1000), "mnist")
        assert abs(evaluate(build_model(1, channels=(2, 4), hidden=16), d) - 0.1) <= 0.05


class TestPhases:

    def test_backbone_phase_freezes_mixtures(self, tiny_model, splits):
        train, test = splits
        before = snapshot(tiny_model, "mixture")
        opt = AdamState.for_params(tiny_model.parameters())
        report = run_phase(tiny_model, train, test, SHORT.phases[0], opt, seed=0, batch_size=16)
        for name, values in before.items():
            np.testing.assert_array_equal(tiny_model.parameters()[name].data, values)
        assert report.steps == 4
        assert len(report.train_loss) == len(report.test_accuracy) == 1

    def test_mixture_phase_freezes_backbone(self, tiny_model, splits):
        train, test = splits
        before = snapshot(tiny_model, "backbone")
        mixtures_before = snapshot(tiny_model, "mixture")
        opt = AdamState.for_params(tiny_model.parameters())
        run_phase(tiny_model, train, test, SHORT.phases[1], opt, seed=0, batch_size=16)
        for name, values in before.items():
            np.testing.assert_array_equal(tiny_model.parameters()[name].data, values)
        assert any(not np.array_equal(tiny_model.parameters()[n].data, v) for n, v in mixtures_before.items())
        for w in tiny_model.mixtures():
            assert np.all(w.w.data >= EPS)

    def test_non_finite_loss_names_position(self, tiny_model, splits):
        train, test = splits
        tiny_model.fc2_bias.data[0] = np.nan
        opt = AdamState.for_params(tiny_model.parameters())
        with pytest.raises(NumericError, match="phase 2, epoch 1, batch 0"):
            run_phase(tiny_model, train, test, SHORT.phases[0], opt, seed=0, phase_index=2)

    def test_train_step_lowers_loss(self, tiny_model, splits):
        train, _ = splits
        batch = make_batches(train, 32, seed=0)[0]
        opt = AdamState.for_params(tiny_model.parameters())
        losses = [train_step(tiny_model, batch, opt, 1e-2) for _ in range(10)]
        assert losses[-1] < losses[0]

    def test_step_with_every_group_frozen(self, tiny_model, splits):
        train, _ = splits
        set_trainable(tiny_model, "backbone", False)
        set_trainable(tiny_model, "mixture", False)
        before = {name: p.data.copy() for name, p in tiny_model.parameters().items()}
        opt = AdamState.for_params(tiny_model.parameters())
        train_step(tiny_model, make_batches(train, 16, seed=0)[0], opt, 1e-2)
        for name, p in tiny_model.parameters().items():
            np.testing.assert_array_equal(p.data, before[name])
        assert opt.t == 0

    def test_backbone_epoch_lowers_mnist_loss(self, mnist_root):
        train = take_subset(load_dataset(mnist_root, "mnist", "train"), 2000, 42)
        test = take_subset(load_dataset(mnist_root, "mnist", "test"), 500, 42)
        m = build_model(42)
        initial = _mean_loss(m, train)
        opt = AdamState.for_params(m.parameters())
        run_phase(m, train, test, PhaseConfig(trainable_group="backbone", lr=1e-3, epochs=1), opt, seed=42)
        assert _mean_loss(m, train) < initial


class TestRunSchedule:

    def test_checkpoints_and_metrics(self, tmp_path, splits):
        train, test = splits
        m = build_model(0, channels=(2, 4), hidden=16)
        report = run_schedule(m, train, test, SHORT, seed=0, out_dir=tmp_path, batch_size=16)

        for k in (1, 2, 3):
            path = tmp_path / "checkpoints" / f"phase{k}.ckpt"
            assert encode_checkpoint(load_checkpoint(path)) == path.read_bytes()
        phase1 = load_checkpoint(tmp_path / "checkpoints" / "phase1.ckpt")
        for name in PARAMETER_GROUPS["mixture"]:
            np.testing.assert_array_equal(phase1.params[name], 1.0)
        phase2 = load_checkpoint(tmp_path / "checkpoints" / "phase2.ckpt")
        phase3 = load_checkpoint(tmp_path / "checkpoints" / "phase3.ckpt")
        for name in PARAMETER_GROUPS["backbone"]:
            np.testing.assert_array_equal(phase2.params[name], phase1.params[name])
        for name in PARAMETER_GROUPS["mixture"]:
            np.testing.assert_array_equal(phase3.params[name], phase2.params[name])

        with open(tmp_path / "metrics.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == METRICS_HEADER
        assert len(rows) == 1 + 2 * 4

        assert [p.epochs for p in report.phases] == [1, 2, 1]
        assert report.final_accuracy == report.phases[-1].test_accuracy[-1]
        for row in report.final_p.values():
            assert sum(row) == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self, tmp_path, splits):
        train, test = splits
        for run in ("a", "b"):
            run_schedule(build_model(4, channels=(2, 4), hidden=16), train, test, SHORT, seed=4,
                         out_dir=tmp_path / run, batch_size=16)
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "checkpoints" / "phase3.ckpt").read_bytes() == (b / "checkpoints" / "phase3.ckpt").read_bytes()


class TestReports:

    def test_final_p_must_be_on_simplex(self):
        with pytest.raises(ValidationError):
            TrainReport(seed=0, dataset="mnist", phases=[], final_p={"act1": [0.5, 0.5, 0.1]}, final_accuracy=0.5)

    def test_metrics_log(self, tmp_path):
        with MetricsLog(tmp_path / "m.csv") as log:
            log.record(1, 1, "train", "loss", 0.25)
        assert (tmp_path / "m.csv").read_text() == "phase,epoch,split,metric,value\n1,1,train,loss,0.25\n"
