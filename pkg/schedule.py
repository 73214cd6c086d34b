"""
Schedule module for the mixture-activation training engine
Runs the three-cycle freeze/unfreeze training plan and records its metrics
"""

import csv
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

import checkpoint as ckpt
from config import DEFAULT_BATCH_SIZE, DEFAULT_SCHEDULE
from data_loader import Batch, Dataset, SeedLike, make_batches
from errors import NumericError, StateError
from mixture import normalize_weights
from model import Model, model_forward, set_trainable, snapshot
from optim import AdamState, adam_step, zero_grad
from tensor import Tape, Tensor, backward, softmax_cross_entropy

logger = logging.getLogger(__name__)

Group = Literal["backbone", "mixture"]
METRICS_HEADER = ("phase", "epoch", "split", "metric", "value")


class PhaseConfig(BaseModel):
    """One cycle: a single trainable group, its learning rate and epoch count"""

    trainable_group: Group
    lr: float = Field(gt=0)
    epochs: int = Field(ge=1)

    @property
    def frozen_group(self) -> Group:
        return "mixture" if self.trainable_group == "backbone" else "backbone"


class Schedule(BaseModel):
    phases: List[PhaseConfig] = Field(min_length=1)

    def scaled(self, factor: float) -> "Schedule":
        """Multiply every phase's epochs by factor (rounded, at least 1)"""
        return Schedule(phases=[
            PhaseConfig(trainable_group=p.trainable_group, lr=p.lr, epochs=max(1, int(round(p.epochs * factor))))
            for p in self.phases
        ])


def default_schedule() -> Schedule:
    return Schedule(phases=[PhaseConfig(trainable_group=g, lr=lr, epochs=e) for g, lr, e in DEFAULT_SCHEDULE])


class PhaseReport(BaseModel):
    index: int
    trainable_group: Group
    lr: float
    epochs: int
    train_loss: List[float] = Field(default_factory=list)
    test_accuracy: List[float] = Field(default_factory=list)
    steps: int = 0
    wall_clock_s: float = 0.0

    @field_validator("test_accuracy")
    @classmethod
    def _unit_interval(cls, v: List[float]) -> List[float]:
        if any(not 0.0 <= a <= 1.0 for a in v):
            raise ValueError("accuracy must lie in [0, 1]")
        return v


class TrainReport(BaseModel):
    """Per-phase metrics plus the final per-layer simplex coordinates"""

    seed: int
    dataset: str
    phases: List[PhaseReport]
    final_p: Dict[str, List[float]]
    final_accuracy: float = Field(ge=0.0, le=1.0)
    config: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("final_p")
    @classmethod
    def _on_simplex(cls, v: Dict[str, List[float]]) -> Dict[str, List[float]]:
        for layer, row in v.items():
            if len(row) != 3 or abs(sum(row) - 1.0) > 1e-12 or any(not 0.0 <= p <= 1.0 for p in row):
                raise ValueError(f"{layer}: P row {row} is not on the probability simplex")
        return v


class MetricsLog:
    """Line-oriented ``phase,epoch,split,metric,value`` records"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(METRICS_HEADER)

    def record(self, phase: int, epoch: int, split: str, metric: str, value: float) -> None:
        self._writer.writerow((phase, epoch, split, metric, repr(float(value))))
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax hits; ties go to the lower class index"""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float((np.argmax(logits, axis=1) == labels).mean())


def evaluate(m: Model, test: Dataset, batch_size: int = 256) -> float:
    """Test accuracy, computed without recording a tape"""
    if len(test) == 0:
        logger.warning("⚠️ Empty test set, reporting accuracy 0")
        return 0.0
    correct = 0
    for start in range(0, len(test), batch_size):
        images = Tensor(test.images.data[start:start + batch_size])
        logits = model_forward(m, images).data
        correct += int((np.argmax(logits, axis=1) == test.labels[start:start + batch_size]).sum())
    return correct / len(test)


def train_step(m: Model, batch: Batch, state: AdamState, lr: float) -> float:
    """Forward, loss, backward and one Adam update; returns the batch loss"""
    params = m.parameters()
    zero_grad(params)
    with Tape() as tape:
        loss = softmax_cross_entropy(model_forward(m, batch.images), batch.labels)
    if not loss.is_finite():
        raise NumericError(f"non-finite loss {loss.item()}")
    if tape.produced(loss):
        backward(tape, loss)
        adam_step(params, state, lr, m.mixtures())
    return loss.item()


def _check_state(m: Model, state: AdamState) -> None:
    for name, p in m.parameters().items():
        if name in state.m and state.m[name].shape != p.shape:
            raise StateError(f"optimizer state for '{name}' has shape {state.m[name].shape}, parameter {p.shape}")


def run_phase(m: Model, train: Dataset, test: Dataset, p: PhaseConfig, opt: AdamState, seed: SeedLike,
              batch_size: int = DEFAULT_BATCH_SIZE, metrics: Optional[MetricsLog] = None,
              phase_index: int = 1, reset_moments: bool = False) -> PhaseReport:
    """
    Train one group for ``p.epochs`` epochs with the other group frozen

    Args:
        m: model, updated in place
        train: training data
        test: evaluated at the end of every epoch
        p: phase configuration
        opt: optimizer state shared across phases
        seed: int or Generator driving the per-epoch shuffles
        batch_size: samples per optimizer step
        metrics: optional metrics sink
        phase_index: 1-based position in the schedule, used in records
        reset_moments: zero Adam moments at phase start

    Returns:
        PhaseReport with per-epoch mean loss and test accuracy
    """
    _check_state(m, opt)
    set_trainable(m, p.trainable_group, True)
    set_trainable(m, p.frozen_group, False)
    frozen = snapshot(m, p.frozen_group)
    opt.start_phase(reset_moments)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    report = PhaseReport(index=phase_index, trainable_group=p.trainable_group, lr=p.lr, epochs=p.epochs)
    started = time.perf_counter()
    logger.info(f"🔁 Phase {phase_index}: training {p.trainable_group} (lr={p.lr:g}, {p.epochs} epochs), "
                f"{p.frozen_group} frozen")
    for epoch in range(1, p.epochs + 1):
        total, seen = 0.0, 0
        for b, batch in enumerate(make_batches(train, batch_size, rng)):
            try:
                loss = train_step(m, batch, opt, p.lr)
            except NumericError as e:
                raise NumericError(f"phase {phase_index}, epoch {epoch}, batch {b}: {e}") from e
            total += loss * len(batch.labels)
            seen += len(batch.labels)
            report.steps += 1
        mean_loss = total / max(seen, 1)
        accuracy = evaluate(m, test)
        report.train_loss.append(mean_loss)
        report.test_accuracy.append(accuracy)
        if metrics is not None:
            metrics.record(phase_index, epoch, "train", "loss", mean_loss)
            metrics.record(phase_index, epoch, "test", "accuracy", accuracy)
        logger.info(f"📊 Phase {phase_index} epoch {epoch}/{p.epochs}: loss {mean_loss:.4f}, "
                    f"test accuracy {accuracy:.4f}")
    report.wall_clock_s = time.perf_counter() - started

    params = m.parameters()
    changed = [name for name, before in frozen.items() if not np.array_equal(before, params[name].data)]
    if changed:
        raise StateError(f"phase {phase_index}: frozen parameters changed: {changed}")
    return report


def run_schedule(m: Model, train: Dataset, test: Dataset, s: Schedule, seed: int,
                 out_dir: Optional[Union[str, Path]] = None, batch_size: int = DEFAULT_BATCH_SIZE,
                 reset_moments: bool = False, config: Optional[Dict[str, Any]] = None) -> TrainReport:
    """
    Run every phase in order on one model with one optimizer state

    Adam moments persist across phases (unless reset_moments) while the
    step counter restarts per phase. With out_dir, a checkpoint is written
    after each phase and metrics go to ``<out_dir>/metrics.csv``.
    """
    rng = np.random.default_rng(seed)
    opt = AdamState.for_params(m.parameters())
    out = Path(out_dir) if out_dir is not None else None
    metrics = MetricsLog(out / "metrics.csv") if out is not None else None
    phases = []
    try:
        for k, p in enumerate(s.phases, 1):
            phases.append(run_phase(m, train, test, p, opt, rng, batch_size=batch_size, metrics=metrics,
                                    phase_index=k, reset_moments=reset_moments))
            if out is not None:
                path = out / "checkpoints" / f"phase{k}.ckpt"
                ckpt.save_checkpoint(path, ckpt.capture(m, opt, rng, phase=k, dataset=train.name, seed=seed))
                logger.info(f"💾 Checkpoint saved: {path}")
    finally:
        if metrics is not None:
            metrics.close()

    final_p = {w.layer_name: normalize_weights(w).values().tolist() for w in m.mixtures()}
    final_accuracy = phases[-1].test_accuracy[-1]
    logger.info(f"✅ Schedule finished: {len(phases)} phases, final test accuracy {final_accuracy:.4f}")
    return TrainReport(seed=seed, dataset=train.name, phases=phases, final_p=final_p,
                       final_accuracy=final_accuracy, config=config or {})
