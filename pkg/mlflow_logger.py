"""
MLflow Logger module for the mixture-activation training engine
Handles run tracking of training schedules: params, per-epoch metrics and artifacts
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import mlflow

from config import MLFLOW_EXPERIMENT_NAME
from schedule import TrainReport

logger = logging.getLogger(__name__)


def init_tracking(tracking_uri: str, experiment: str = MLFLOW_EXPERIMENT_NAME) -> bool:
    """
    Point MLflow at a tracking server or local store

    Args:
        tracking_uri: server URL or ``file:`` URI; empty disables tracking
        experiment: experiment name to log under

    Returns:
        True when tracking is ready
    """
    if not tracking_uri:
        return False
    try:
        mlflow.set_tracking_uri(tracking_uri)
        mlflow.set_experiment(experiment)
        logger.info(f"✅ MLflow tracking at {tracking_uri} (experiment '{experiment}')")
        return True
    except Exception as e:
        logger.warning(f"⚠️ MLflow setup failed: {e}")
        return False


def log_training_run(report: TrainReport, out_dir: Union[str, Path],
                     run_name: Optional[str] = None) -> Optional[str]:
    """
    Log a finished schedule to MLflow

    Args:
        report: the schedule's TrainReport
        out_dir: run directory whose artifacts (metrics.csv, curves, tables) are attached
        run_name: optional name for the run

    Returns:
        MLflow run ID, or None when logging failed
    """
    out = Path(out_dir)
    try:
        if not run_name:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            run_name = f"mixact_{report.dataset}_seed{report.seed}_{timestamp}"

        with mlflow.start_run(run_name=run_name) as run:
            # Log parameters
            mlflow.log_param("dataset", report.dataset)
            mlflow.log_param("seed", report.seed)
            for key, value in report.config.items():
                mlflow.log_param(f"config.{key}", str(value)[:250])
            for phase in report.phases:
                mlflow.log_param(f"phase{phase.index}", f"{phase.trainable_group}:{phase.lr:g}:{phase.epochs}")

            # Log metrics, one step per epoch across the whole schedule
            step = 0
            for phase in report.phases:
                for loss, accuracy in zip(phase.train_loss, phase.test_accuracy):
                    step += 1
                    mlflow.log_metric("train_loss", loss, step=step)
                    mlflow.log_metric("test_accuracy", accuracy, step=step)
                mlflow.log_metric(f"phase{phase.index}_wall_clock_s", phase.wall_clock_s)
            mlflow.log_metric("final_accuracy", report.final_accuracy)
            for layer, row in report.final_p.items():
                for i, p in enumerate(row, 1):
                    mlflow.log_metric(f"{layer}_P{i}", p)

            # Log artifacts
            mlflow.log_text(json.dumps(report.final_p, indent=2), "final_p.json")
            for name in ("metrics.csv", "weight_table.txt", "leaky_fits.json", "report.json", "config_echo.txt"):
                if (out / name).exists():
                    mlflow.log_artifact(str(out / name))
            if (out / "curves").is_dir():
                mlflow.log_artifacts(str(out / "curves"), artifact_path="curves")

            logger.info(f"✅ MLflow run logged: {run.info.run_id}")
            logger.info(f"   Run name: {run_name}")
            logger.info(f"   Final accuracy: {report.final_accuracy:.4f}")
            return run.info.run_id

    except Exception as e:
        logger.warning(f"❌ Failed to log to MLflow: {e}")
        return None
