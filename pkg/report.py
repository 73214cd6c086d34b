"""
Report module for the mixture-activation training engine
Weight tables, activation-curve exports and the LeakyReLU approximation
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import matplotlib
import numpy as np
from rich.table import Table

from errors import ConfigError
from mixture import BASIS_NAMES, MixtureWeights, dominant_slot, mixture_forward, normalize_weights
from model import Model
from tensor import Tensor

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed id salt so repeated exports of the same curve give identical SVG bytes
plt.rcParams["svg.hashsalt"] = "mixture-activation"

# Learned P rows reported for the three datasets (layer -> (P1, P2, P3))
REFERENCE_P_TABLE: Dict[str, Dict[str, Tuple[float, float, float]]] = {
    "mnist": {
        "act1": (0.4848, 0.4437, 0.0715),
        "act2": (0.0276, 0.4923, 0.4800),
        "act3": (0.2840, 0.0877, 0.6283),
    },
    "fashion_mnist": {
        "act1": (0.5178, 0.1470, 0.3352),
        "act2": (0.2907, 0.7001, 0.0091),
        "act3": (0.1221, 0.0410, 0.8369),
    },
    "kmnist": {
        "act1": (0.5590, 0.0101, 0.4309),
        "act2": (0.3754, 0.1167, 0.5079),
        "act3": (0.0679, 0.0156, 0.9165),
    },
}


class WeightRow(NamedTuple):
    layer: str
    p1: float
    p2: float
    p3: float

    @property
    def values(self) -> Tuple[float, float, float]:
        return self.p1, self.p2, self.p3

    def formatted(self) -> Tuple[str, str, str]:
        return tuple(f"{p:.4f}" for p in self.values)


@dataclass
class CurveSample:
    """n uniform samples (x, A(x)) of one layer's activation, endpoints included"""

    layer: str
    x_range: Tuple[float, float]
    xs: np.ndarray
    ys: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.xs.tolist(), self.ys.tolist()))


@dataclass
class LeakyFit:
    """Per-side slopes through the origin: h1 for x >= 0, h2 for x < 0"""

    layer: str
    h1: float
    h2: float
    residual: float
    negative_slope: Optional[float]


def weight_table(m: Model) -> List[WeightRow]:
    """One (layer, P1, P2, P3) row per activation layer"""
    rows = []
    for w in m.mixtures():
        p = normalize_weights(w).values()
        rows.append(WeightRow(w.layer_name, float(p[0]), float(p[1]), float(p[2])))
    return rows


def format_weight_table(rows: Sequence[WeightRow]) -> str:
    lines = [f"{'layer':<8}{'P1':>8}{'P2':>8}{'P3':>8}"]
    for row in rows:
        p1, p2, p3 = row.formatted()
        lines.append(f"{row.layer:<8}{p1:>8}{p2:>8}{p3:>8}")
    return "\n".join(lines) + "\n"


def render_weight_table(rows: Sequence[WeightRow], dataset: Optional[str] = None) -> Table:
    """Rich table with the dominant basis and, when known, the distance to the reference row"""
    reference = REFERENCE_P_TABLE.get(dataset or "", {})
    table = Table(title=f"Mixture weights P ({dataset})" if dataset else "Mixture weights P")
    for column in ("Layer", "P1 relu", "P2 tanh", "P3 sin", "Dominant"):
        table.add_column(column)
    if reference:
        table.add_column("Max |ΔP| vs reference")
    for row in rows:
        cells = [row.layer, *row.formatted(), dominant_slot(row.values)[1]]
        if reference and row.layer in reference:
            cells.append(f"{max(abs(a - b) for a, b in zip(row.values, reference[row.layer])):.4f}")
        table.add_row(*cells)
    return table


def _detached(w: MixtureWeights) -> MixtureWeights:
    return MixtureWeights(Tensor(w.w.data.copy()), w.layer_name)


def sample_curve(w: MixtureWeights, x_min: float, x_max: float, n: int) -> CurveSample:
    """Evaluate A(x) on n uniform points of [x_min, x_max] without a tape"""
    if not x_min < x_max:
        raise ConfigError(f"sample_curve: need x_min < x_max, got {x_min}, {x_max}")
    if n < 2:
        raise ConfigError(f"sample_curve: need at least 2 points, got {n}")
    xs = np.linspace(x_min, x_max, n)
    # snap the grid point nearest the origin so symmetric ranges hit x = 0 exactly
    xs[np.abs(xs) <= 1e-12 * (x_max - x_min)] = 0.0
    ys = mixture_forward(Tensor(xs), _detached(w)).data.copy()
    return CurveSample(w.layer_name, (float(x_min), float(x_max)), xs, ys)


def fit_leaky_relu(w: MixtureWeights, x_min: float, x_max: float, n: int) -> LeakyFit:
    """
    Least-squares slopes through the origin on each side of zero

    h = sum(x * A(x)) / sum(x^2) per side; residual is the RMS error of the
    two-piece fit over every sample. negative_slope = h2 / h1 is the
    LeakyReLU slope once the positive side is scaled to 1.
    """
    if not x_min < 0.0 < x_max:
        raise ConfigError(f"fit_leaky_relu: range [{x_min}, {x_max}] must straddle 0")
    curve = sample_curve(w, x_min, x_max, n)
    xs, ys = curve.xs, curve.ys
    pos, neg = xs > 0, xs < 0
    if not pos.any() or not neg.any():
        raise ConfigError(f"fit_leaky_relu: {n} samples leave one side of 0 empty")
    h1 = float((xs[pos] * ys[pos]).sum() / (xs[pos] ** 2).sum())
    h2 = float((xs[neg] * ys[neg]).sum() / (xs[neg] ** 2).sum())
    fitted = np.where(xs >= 0, h1 * xs, h2 * xs)
    residual = float(np.sqrt(np.mean((ys - fitted) ** 2)))
    negative_slope = h2 / h1 if h1 != 0.0 else None
    return LeakyFit(w.layer_name, h1, h2, residual, negative_slope)


def dominant_basis(w: MixtureWeights, x: float) -> str:
    """Basis whose weighted term |P_i f_i(x)| is largest at x"""
    p = normalize_weights(_detached(w)).values()
    terms = p * np.array([max(x, 0.0), np.tanh(x), np.sin(x)])
    return BASIS_NAMES[int(np.argmax(np.abs(terms)))]


def _range_tag(value: float) -> str:
    return f"{value:g}"


def curve_name(sample: CurveSample) -> str:
    lo, hi = sample.x_range
    return f"{sample.layer}_{_range_tag(lo)}_{_range_tag(hi)}"


def export_curves(samples: Sequence[CurveSample], out_dir: Union[str, Path]) -> List[Path]:
    """
    Write ``<layer>_<xmin>_<xmax>.csv`` (header ``x,A``, 12 significant
    digits) and an SVG polyline of the same curve for every sample
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for sample in samples:
        stem = curve_name(sample)
        csv_path = out / f"{stem}.csv"
        lines = ["x,A"] + [f"{x:.12g},{a:.12g}" for x, a in zip(sample.xs, sample.ys)]
        csv_path.write_text("\n".join(lines) + "\n")

        svg_path = out / f"{stem}.svg"
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(sample.xs, sample.ys, linewidth=1.0)
        ax.axhline(0.0, color="0.8", linewidth=0.5)
        ax.axvline(0.0, color="0.8", linewidth=0.5)
        ax.set_xlabel("x")
        ax.set_ylabel("A(x)")
        ax.set_title(f"{sample.layer}, {_range_tag(sample.x_range[0])} <= x <= {_range_tag(sample.x_range[1])}")
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.extend([csv_path, svg_path])
    logger.info(f"✅ Exported {len(samples)} curves to {out}")
    return written


def read_curve_csv(path: Union[str, Path]) -> np.ndarray:
    """(n x 2) array of the points in an exported curve CSV"""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def model_curves(m: Model, ranges: Sequence[Tuple[float, float]], n: int) -> List[CurveSample]:
    return [sample_curve(w, lo, hi, n) for w in m.mixtures() for lo, hi in ranges]


def model_fits(m: Model, x_range: Tuple[float, float], n: int) -> List[LeakyFit]:
    return [fit_leaky_relu(w, x_range[0], x_range[1], n) for w in m.mixtures()]


def write_fits(fits: Sequence[LeakyFit], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps([asdict(f) for f in fits], indent=2) + "\n")
    return path


def render_fits(fits: Sequence[LeakyFit]) -> Table:
    table = Table(title="LeakyReLU approximation  A ≈ h1*x (x ≥ 0), h2*x (x < 0)")
    for column in ("Layer", "h1", "h2", "h2/h1", "RMS residual"):
        table.add_column(column)
    for f in fits:
        slope = f"{f.negative_slope:.4f}" if f.negative_slope is not None else "-"
        table.add_row(f.layer, f"{f.h1:.4f}", f"{f.h2:.4f}", slope, f"{f.residual:.2e}")
    return table


def trend_notes(rows: Sequence[WeightRow]) -> List[str]:
    """
    Compare the learned rows with the expected trend: the first layer
    dominated by ReLU, deeper layers shifting weight to bounded bases
    """
    if not rows:
        return []
    notes = []
    first = rows[0]
    _, name = dominant_slot(first.values)
    verdict = "agrees" if name == "relu" else "disagrees"
    notes.append(f"{first.layer}: dominant basis {name}, {verdict} with a ReLU-dominated first layer")
    first_bounded = first.p2 + first.p3
    for row in rows[1:]:
        _, name = dominant_slot(row.values)
        bounded = row.p2 + row.p3
        verdict = "agrees" if bounded > first_bounded else "disagrees"
        notes.append(
            f"{row.layer}: dominant basis {name}, tanh+sin share {bounded:.4f} vs {first_bounded:.4f} "
            f"in {first.layer}, {verdict} with deeper layers favouring bounded bases"
        )
    return notes
