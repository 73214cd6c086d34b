"""
Main execution module for the mixture-activation training engine
Command-line entry point: train, eval, report and gradcheck subcommands
"""

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

import report as rp
from checkpoint import load_checkpoint, restore_model
from config import (
    DEFAULT_FIT_RANGE,
    DEFAULT_SEED,
    GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
    RunConfig,
    load_config,
    parse_range,
    setup_logging,
    validate_config,
)
from data_loader import expected_files, load_dataset, take_subset
from errors import ConfigError, DataError, GradcheckError, MixActError
from mlflow_logger import init_tracking, log_training_run
from model import Model, build_model, model_forward
from schedule import PhaseConfig, Schedule, evaluate, run_schedule
from tensor import GradcheckReport, Tensor, gradcheck_report, softmax_cross_entropy

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Name the step that failed in the error log"""
    try:
        yield
    except MixActError as e:
        logger.error(f"❌ {name} failed: {e}")
        raise


@contextmanager
def run_directory(cfg: RunConfig) -> Iterator[Path]:
    """Create out_dir, hold its lockfile and write the resolved config echo"""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise ConfigError(f"{out} is used by another run (delete {lock} if it is stale)") from e
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        (out / "config_echo.txt").write_text(cfg.to_echo())
        yield out
    finally:
        lock.unlink(missing_ok=True)


def schedule_from_config(cfg: RunConfig) -> Schedule:
    phases = [PhaseConfig(trainable_group=p.group, lr=p.lr, epochs=p.epochs) for p in cfg.schedule]
    return Schedule(phases=phases).scaled(cfg.epochs_scale)


def write_analysis(m: Model, out: Path, ranges: Sequence[Tuple[float, float]], curve_points: int,
                   fit_points: int, dataset: Optional[str]) -> List[rp.WeightRow]:
    """Weight table, curves, LeakyReLU fits and trend notes for one model"""
    rows = rp.weight_table(m)
    console.print(rp.render_weight_table(rows, dataset))
    (out / "weight_table.txt").write_text(rp.format_weight_table(rows))

    rp.export_curves(rp.model_curves(m, ranges, curve_points), out / "curves")

    fits = rp.model_fits(m, DEFAULT_FIT_RANGE, fit_points)
    console.print(rp.render_fits(fits))
    rp.write_fits(fits, out / "leaky_fits.json")

    for w in m.mixtures():
        edges = ", ".join(f"x={hi:g}: {rp.dominant_basis(w, hi)}" for _, hi in ranges)
        logger.info(f"📈 {w.layer_name} dominant term by range end: {edges}")
    for note in rp.trend_notes(rows):
        logger.info(f"🔎 {note}")
    return rows


def cmd_train(cfg: RunConfig) -> int:
    """Run the full schedule and write every artifact of the run"""
    try:
        with run_directory(cfg) as out:
            with stage("Loading dataset"):
                issues = validate_config(cfg)
                if issues:
                    for path in expected_files(cfg.data_root, cfg.dataset):
                        logger.error(f"   expected: {path} (or {path.name}.gz)")
                    raise DataError("; ".join(issues))
                train = take_subset(load_dataset(cfg.data_root, cfg.dataset, "train"), cfg.subset_train, cfg.seed)
                test = take_subset(load_dataset(cfg.data_root, cfg.dataset, "test"), cfg.subset_test, cfg.seed)

            with stage("Training"):
                model = build_model(cfg.seed)
                result = run_schedule(
                    model, train, test, schedule_from_config(cfg), cfg.seed,
                    out_dir=out, batch_size=cfg.batch_size,
                    reset_moments=cfg.reset_optimizer_moments,
                    config=json.loads(cfg.model_dump_json()),
                )

            with stage("Writing report"):
                write_analysis(model, out, cfg.curve_ranges, cfg.curve_points, cfg.fit_points, cfg.dataset)
                (out / "report.json").write_text(result.model_dump_json(indent=2) + "\n")

            if init_tracking(cfg.mlflow_tracking_uri):
                log_training_run(result, out)

            console.print(f"🎯 Final test accuracy: {result.final_accuracy:.4f}")
            return EXIT_OK
    except MixActError as e:
        return e.exit_code


def cmd_eval(cfg: RunConfig, checkpoint: Path) -> int:
    """Accuracy of a checkpoint on the configured test split"""
    try:
        with run_directory(cfg):
            with stage("Loading checkpoint"):
                model = restore_model(load_checkpoint(checkpoint))
            with stage("Loading dataset"):
                test = take_subset(load_dataset(cfg.data_root, cfg.dataset, "test"), cfg.subset_test, cfg.seed)
            with stage("Evaluating"):
                accuracy = evaluate(model, test)
            console.print(f"📊 {checkpoint}: test accuracy {accuracy:.4f} on {len(test)} samples")
            return EXIT_OK
    except MixActError as e:
        return e.exit_code


def cmd_report(checkpoint: Path, ranges: Optional[Sequence[Tuple[float, float]]] = None,
               cfg: Optional[RunConfig] = None) -> int:
    """Weight table, curve files and LeakyReLU fits of a saved model"""
    cfg = cfg or RunConfig()
    ranges = list(ranges) if ranges else cfg.curve_ranges
    try:
        with run_directory(cfg) as out:
            with stage("Loading checkpoint"):
                ckpt = load_checkpoint(checkpoint)
                model = restore_model(ckpt)
            with stage("Writing report"):
                write_analysis(model, out, ranges, cfg.curve_points, cfg.fit_points, ckpt.meta.get("dataset"))
            return EXIT_OK
    except MixActError as e:
        return e.exit_code


def check_reduced_model(size: str = "tiny", seed: int = DEFAULT_SEED) -> GradcheckReport:
    """Gradient check of the reduced model on 4 synthetic images"""
    if size != "tiny":
        raise ConfigError(f"unknown gradcheck size '{size}', expected tiny")
    model = build_model(seed, channels=(2, 4), hidden=16)
    rng = np.random.default_rng(seed)
    # off the uniform start so every quotient-path term differs
    for w in model.mixtures():
        w.w.data[:] = rng.uniform(0.5, 1.5, size=3)
    images = Tensor(rng.uniform(0.0, 1.0, size=(4, 1, 28, 28)))
    labels = rng.integers(0, 10, size=4)

    def loss() -> Tensor:
        return softmax_cross_entropy(model_forward(model, images), labels)

    return gradcheck_report(loss, list(model.parameters().values()), h=GRADCHECK_STEP, tol=GRADCHECK_TOLERANCE)


def cmd_gradcheck(size: str = "tiny", seed: int = DEFAULT_SEED, cfg: Optional[RunConfig] = None) -> int:
    """Finite-difference check of every gradient of the reduced model"""
    cfg = cfg or RunConfig(seed=seed)
    try:
        with run_directory(cfg):
            with stage("Gradient check"):
                result = check_reduced_model(size, seed)
                passed = result.refined <= GRADCHECK_TOLERANCE
                table = Table(title=f"Gradient check (reduced model, 4 synthetic images, {result.elements} elements)")
                for column in ("h", "central", "refined", "tolerance", "result"):
                    table.add_column(column)
                table.add_row(f"{GRADCHECK_STEP:g}", f"{result.central:.3e}", f"{result.refined:.3e}",
                              f"{GRADCHECK_TOLERANCE:g}", "✅ pass" if passed else "❌ fail")
                console.print(table)
                if not passed:
                    raise GradcheckError(f"max relative error {result.refined:.3e} exceeds {GRADCHECK_TOLERANCE:g}")
            return EXIT_OK
    except MixActError as e:
        return e.exit_code


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--dataset", choices=("mnist", "fashion_mnist", "kmnist"))
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--subset-train", dest="subset_train", type=int)
    p.add_argument("--subset-test", dest="subset_test", type=int)
    p.add_argument("--epochs-scale", dest="epochs_scale", type=float,
                   help="multiplies every phase's epoch count")
    p.add_argument("--range", dest="ranges", action="append", metavar="MIN:MAX",
                   help="curve range, repeatable")
    p.add_argument("--log-level", dest="log_level")
    p.add_argument("--mlflow-uri", dest="mlflow_tracking_uri")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixact", description="Learnable ReLU/tanh/sin mixture activations")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("train", help="run the three-cycle training schedule"))

    p = sub.add_parser("eval", help="test accuracy of a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("report", help="weight table, curves and LeakyReLU fits of a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_run_flags(p)
    p.add_argument("--size", choices=("tiny",), default="tiny")
    return parser


def _attach_range_values(argv: Sequence[str]) -> List[str]:
    # argparse reads a value like -3:3 after a separate "--range" as an option string
    out: List[str] = []
    tokens = iter(argv)
    for token in tokens:
        value = next(tokens, None) if token == "--range" else None
        out.append(f"--range={value}" if value is not None else token)
    return out


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else argv
    return build_parser().parse_args(_attach_range_values(argv))


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        key: getattr(args, key)
        for key in ("dataset", "data_root", "out_dir", "seed", "batch_size", "subset_train",
                    "subset_test", "epochs_scale", "log_level", "mlflow_tracking_uri")
    }
    if args.ranges:
        overrides["curve_ranges"] = [parse_range(r) for r in args.ranges]
    return load_config(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as e:
        setup_logging()
        logger.error(f"❌ Configuration failed: {e}")
        return e.exit_code
    setup_logging(cfg.log_level)

    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint)
    if args.command == "report":
        return cmd_report(args.checkpoint, cfg.curve_ranges, cfg)
    return cmd_gradcheck(args.size, cfg.seed, cfg)


if __name__ == "__main__":
    sys.exit(main())
