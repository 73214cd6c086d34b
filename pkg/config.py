"""
Configuration module for the mixture-activation training engine
Contains all defaults, the run configuration model and logging setup
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from rich.logging import RichHandler

from data_loader import expected_files
from errors import ConfigError

# =============================================================================
# ⚙️ DEFAULTS
# =============================================================================

DEFAULT_DATASET = "mnist"
DEFAULT_DATA_ROOT = "data"
DEFAULT_OUT_DIR = "runs/latest"
DEFAULT_SEED = 42
DEFAULT_BATCH_SIZE = 64

# (group, learning rate, epochs) for the three training cycles
DEFAULT_SCHEDULE = (
    ("backbone", 1e-3, 10),
    ("mixture", 1e-2, 10),
    ("backbone", 1e-3, 10),
)
DEFAULT_CURVE_RANGES = ((-3.0, 3.0), (-1.0, 1.0), (-10.0, 10.0), (-100.0, 100.0))
DEFAULT_CURVE_POINTS = 601
DEFAULT_FIT_POINTS = 201
DEFAULT_FIT_RANGE = (-1.0, 1.0)

# Gradient check
GRADCHECK_STEP = 1e-3
GRADCHECK_TOLERANCE = 1e-4

# MLflow Configuration (empty disables tracking)
MLFLOW_TRACKING_URI = ""
MLFLOW_EXPERIMENT_NAME = "mixture-activation"

# Logging Configuration
LOG_LEVEL = "INFO"


class PhaseSpec(BaseModel):
    """One (group, lr, epochs) entry of a configured schedule"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    group: str
    lr: float = Field(gt=0)
    epochs: int = Field(ge=1)

    @field_validator("group")
    @classmethod
    def _known_group(cls, v: str) -> str:
        if v not in ("backbone", "mixture"):
            raise ValueError(f"group must be backbone or mixture, got '{v}'")
        return v


def _parse_pairs(text: str) -> List[List[str]]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    return [item.split(":") for item in items]


class RunConfig(BaseModel):
    """Fully resolved configuration of one run"""

    model_config = ConfigDict(extra="forbid")

    dataset: str = DEFAULT_DATASET
    data_root: Path = Path(DEFAULT_DATA_ROOT)
    out_dir: Path = Path(DEFAULT_OUT_DIR)
    seed: int = DEFAULT_SEED
    schedule: List[PhaseSpec] = Field(
        default_factory=lambda: [PhaseSpec(group=g, lr=lr, epochs=e) for g, lr, e in DEFAULT_SCHEDULE]
    )
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    subset_train: Optional[int] = Field(default=None, ge=1)
    subset_test: Optional[int] = Field(default=None, ge=1)
    epochs_scale: float = Field(default=1.0, gt=0)
    curve_ranges: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_CURVE_RANGES))
    curve_points: int = Field(default=DEFAULT_CURVE_POINTS, ge=2)
    fit_points: int = Field(default=DEFAULT_FIT_POINTS, ge=2)
    reset_optimizer_moments: bool = False
    mlflow_tracking_uri: str = MLFLOW_TRACKING_URI
    log_level: str = LOG_LEVEL

    @field_validator("dataset")
    @classmethod
    def _known_dataset(cls, v: str) -> str:
        if v not in ("mnist", "fashion_mnist", "kmnist"):
            raise ValueError(f"dataset must be mnist, fashion_mnist or kmnist, got '{v}'")
        return v

    @field_validator("schedule", mode="before")
    @classmethod
    def _parse_schedule(cls, v: Any) -> Any:
        if isinstance(v, str):
            phases = []
            for parts in _parse_pairs(v):
                if len(parts) != 3:
                    raise ValueError(f"schedule entries are group:lr:epochs, got '{':'.join(parts)}'")
                phases.append({"group": parts[0], "lr": float(parts[1]), "epochs": int(parts[2])})
            v = phases
        if not v:
            raise ValueError("schedule must contain at least one phase")
        return v

    @field_validator("curve_ranges", mode="before")
    @classmethod
    def _parse_ranges(cls, v: Any) -> Any:
        if isinstance(v, str):
            v = [parse_range(":".join(parts)) for parts in _parse_pairs(v)]
        return v

    @field_validator("curve_ranges")
    @classmethod
    def _ordered_ranges(cls, v: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        for lo, hi in v:
            if not lo < hi:
                raise ValueError(f"curve range needs min < max, got {lo}:{hi}")
        return v

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ValueError(f"unknown log level '{v}'")
        return v

    def to_echo(self) -> str:
        """Render as a ``key = value`` file that load_config reads back"""
        lines = []
        for key, value in self.model_dump().items():
            if key == "schedule":
                value = ",".join(f"{p['group']}:{p['lr']!r}:{p['epochs']}" for p in value)
            elif key == "curve_ranges":
                value = ",".join(f"{lo!r}:{hi!r}" for lo, hi in value)
            elif value is None:
                continue
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_range(text: str) -> Tuple[float, float]:
    """``min:max`` -> (min, max)"""
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError as e:
        raise ConfigError(f"range must look like min:max, got '{text}'") from e
    if not lo < hi:
        raise ConfigError(f"range needs min < max, got '{text}'")
    return lo, hi


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional ``key = value`` file plus overrides

    Args:
        path: config file; '#' comments and blank lines are allowed
        overrides: values from command-line flags (None entries are ignored)

    Returns:
        Validated RunConfig; unknown keys raise ConfigError
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        issues = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid configuration: {issues}") from e


def validate_config(cfg: RunConfig) -> List[str]:
    """Issues that would stop a training run before it starts"""
    issues = []
    for path in expected_files(cfg.data_root, cfg.dataset):
        if not path.exists() and not path.with_name(path.name + ".gz").exists():
            issues.append(f"missing dataset file {path}")
    return issues


def setup_logging(level: str = LOG_LEVEL) -> None:
    """Route all module loggers through a rich handler"""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=False, show_path=False)],
        force=True,
    )
