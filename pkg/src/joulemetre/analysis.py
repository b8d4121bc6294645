"""Statistics over collections of profiled runs.

Correlations (Pearson/Spearman), the energy-on-complexity regression, batch
sweep curves, lifecycle phase splits, and carbon conversion. Everything
operates on immutable ``RunSummary`` values — no I/O except the report
bundle writer at the bottom.

Spearman uses average ranks for ties. The energy model is ordinary least
squares with an intercept, the simplest form consistent with how the
underlying relationship presents; r-squared is reported alongside.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    DegenerateVariance,
    DuplicateBatchSize,
    InsufficientRuns,
    OutOfRange,
    ZeroParameters,
)
from .models import ModelManifest, macs_per_param

# --- primitive statistics ---


def _as_pair(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(list(xs), dtype=float)
    y = np.asarray(list(ys), dtype=float)
    if x.shape != y.shape:
        raise DegenerateInput(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DegenerateInput("need at least 2 observations")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x, y = _as_pair(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    # Correlation is scale-invariant, so normalise each deviation vector by
    # its largest magnitude before squaring: otherwise deviations around
    # 1e-200 underflow the squared sums to zero (a spurious "constant
    # input"), and deviations around 1e200 overflow them to inf.
    mx = float(np.max(np.abs(dx)))
    my = float(np.max(np.abs(dy)))
    if mx == 0.0 or my == 0.0:
        raise DegenerateVariance("correlation undefined for constant input")
    dx = dx / mx
    dy = dy / my
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank positions."""
    arr = np.asarray(list(values), dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.shape[0], dtype=float)
    sorted_vals = arr[order]
    i = 0
    n = arr.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson over average-rank vectors."""
    x, y = _as_pair(xs, ys)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class CorrelationResult:
    pearson_r: float
    spearman_rho: float
    n: int
    x_label: str
    y_label: str

    def __post_init__(self):
        if not -1.0 <= self.pearson_r <= 1.0:
            raise OutOfRange(f"|r| must be <= 1, got {self.pearson_r}")
        if not -1.0 <= self.spearman_rho <= 1.0:
            raise OutOfRange(f"|rho| must be <= 1, got {self.spearman_rho}")
        if self.n < 2:
            raise OutOfRange(f"n must be >= 2, got {self.n}")


# --- run summaries and metric extraction ---


@dataclass(frozen=True)
class RunSummary:
    """The slice of a finished run that analysis needs."""

    run_id: str
    total_adjusted_j: float
    duration_s: float
    hardware_hash: str = ""
    mean_gpu_util: float | None = None
    mean_power_w: float | None = None
    batch_size: int | None = None
    phase: str = "training"
    manifest: ModelManifest | None = None


def _metric_macs(run: RunSummary) -> float | None:
    return float(run.manifest.macs_per_sample) if run.manifest else None


def _metric_macs_per_param(run: RunSummary) -> float | None:
    if run.manifest is None:
        return None
    try:
        return macs_per_param(run.manifest)
    except ZeroParameters:
        return None


def _metric_total_params(run: RunSummary) -> float | None:
    return float(run.manifest.total_params) if run.manifest else None


def _metric_model_size(run: RunSummary) -> float | None:
    return float(run.manifest.model_size_bytes) if run.manifest else None


def _metric_duration(run: RunSummary) -> float | None:
    return run.duration_s


def _metric_mean_utilisation(run: RunSummary) -> float | None:
    return run.mean_gpu_util


METRICS: dict[str, Callable[[RunSummary], float | None]] = {
    "macs": _metric_macs,
    "macs_per_param": _metric_macs_per_param,
    "total_params": _metric_total_params,
    "model_size": _metric_model_size,
    "duration": _metric_duration,
    "mean_utilisation": _metric_mean_utilisation,
}


def correlate_metric_vs_energy(
    runs: Sequence[RunSummary], metric: str | Callable[[RunSummary], float | None]
) -> CorrelationResult:
    """Correlation of a per-run metric against idle-adjusted total energy."""
    if isinstance(metric, str):
        try:
            extractor = METRICS[metric]
        except KeyError:
            raise DegenerateInput(
                f"unknown metric {metric!r}; known: {sorted(METRICS)}"
            ) from None
        label = metric
    else:
        extractor = metric
        label = getattr(metric, "__name__", "metric")
    pairs = []
    for run in runs:
        value = extractor(run)
        if value is not None:
            pairs.append((value, run.total_adjusted_j))
    if len(pairs) < 2:
        raise InsufficientRuns(
            f"need >= 2 runs with {label} and energy, have {len(pairs)}"
        )
    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]
    return CorrelationResult(
        pearson_r=pearson(xs, ys),
        spearman_rho=spearman(xs, ys),
        n=len(pairs),
        x_label=label,
        y_label="total_adjusted_j",
    )


def correlate_by_group(
    runs: Sequence[RunSummary], metric: str
) -> dict[str, CorrelationResult]:
    """Per hardware-config group and pooled. Groups too small to correlate
    are skipped; the pooled row is always attempted."""
    groups: dict[str, list[RunSummary]] = {}
    for run in runs:
        groups.setdefault(run.hardware_hash or "unknown", []).append(run)
    out: dict[str, CorrelationResult] = {}
    for name in sorted(groups):
        try:
            out[name] = correlate_metric_vs_energy(groups[name], metric)
        except (InsufficientRuns, DegenerateVariance):
            continue
    out["pooled"] = correlate_metric_vs_energy(runs, metric)
    return out


# --- energy-on-complexity regression ---


@dataclass(frozen=True)
class EnergyModel:
    """total energy ~ slope * macs_per_param + intercept"""

    slope: float
    intercept: float
    r_squared: float
    n: int

    def predict(self, model: ModelManifest | float) -> float:
        ratio = macs_per_param(model) if isinstance(model, ModelManifest) else model
        return self.slope * ratio + self.intercept

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "n": self.n,
        }


def fit_energy_model(runs: Sequence[RunSummary]) -> EnergyModel:
    pairs = []
    for run in runs:
        ratio = _metric_macs_per_param(run)
        if ratio is not None:
            pairs.append((ratio, run.total_adjusted_j))
    if len(pairs) < 3:
        raise InsufficientRuns(f"need >= 3 runs with manifests, have {len(pairs)}")
    x = np.asarray([p[0] for p in pairs], dtype=float)
    y = np.asarray([p[1] for p in pairs], dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise DegenerateVariance("all runs share one macs_per_param value")
    sxy = float(np.dot(dx, dy))
    slope = sxy / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    syy = float(np.dot(dy, dy))
    r_squared = 1.0 if syy == 0.0 else min(1.0, (sxy * sxy) / (sxx * syy))
    return EnergyModel(slope=slope, intercept=intercept, r_squared=r_squared, n=len(pairs))


# --- batch sweeps ---


@dataclass(frozen=True)
class SweepPoint:
    batch_size: int
    total_energy: float
    mean_power: float = 0.0
    duration: float = 0.0
    mean_gpu_util: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise OutOfRange(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_energy < 0 or self.duration < 0:
            raise OutOfRange("energy and duration must be >= 0")


@dataclass(frozen=True)
class SweepSummary:
    points: tuple[SweepPoint, ...]
    best_batch_size: int
    min_energy: float

    def to_rows(self) -> list[dict]:
        return [
            {
                "batch_size": p.batch_size,
                "total_energy_j": p.total_energy,
                "mean_power_w": p.mean_power,
                "duration_s": p.duration,
                "mean_gpu_util": p.mean_gpu_util,
                "is_minimum": p.batch_size == self.best_batch_size,
            }
            for p in self.points
        ]


def batch_sweep_summary(points: Iterable[SweepPoint]) -> SweepSummary:
    """Sweep curve sorted by batch size plus the energy-minimising batch.

    Ties break toward the smaller batch: when two batch sizes cost the same,
    the smaller one is the better default for accuracy.
    """
    pts = sorted(points, key=lambda p: p.batch_size)
    if len(pts) < 2:
        raise DegenerateInput("need at least 2 sweep points")
    seen: set[int] = set()
    for p in pts:
        if p.batch_size in seen:
            raise DuplicateBatchSize(f"batch size {p.batch_size} appears twice")
        seen.add(p.batch_size)
    best = pts[0]
    for p in pts[1:]:
        if p.total_energy < best.total_energy:
            best = p
    return SweepSummary(
        points=tuple(pts), best_batch_size=best.batch_size, min_energy=best.total_energy
    )


# --- lifecycle phases ---


@dataclass(frozen=True)
class PhaseSplit:
    """Percentage shares per lifecycle phase.

    Shares sum to 100 within 0.01; the all-zero split is the defined result
    for a lifecycle with no energy anywhere.
    """

    data_pct: float
    experimentation_pct: float
    training_pct: float
    inference_pct: float

    def __post_init__(self):
        total = (
            self.data_pct
            + self.experimentation_pct
            + self.training_pct
            + self.inference_pct
        )
        if total != 0.0 and abs(total - 100.0) > 0.01:
            raise OutOfRange(f"phase percentages sum to {total}, not 100")

    def as_dict(self) -> dict[str, float]:
        return {
            "data": self.data_pct,
            "experimentation": self.experimentation_pct,
            "training": self.training_pct,
            "inference": self.inference_pct,
        }


#: Compute-cycle reference split (experimentation : training : inference).
COMPUTE_CYCLE_SPLIT = {"experimentation": 10.0, "training": 20.0, "inference": 70.0}
#: Whole-lifecycle reference split (data : experimentation+training : inference).
LIFECYCLE_SPLIT = {"data": 31.0, "experimentation+training": 29.0, "inference": 40.0}


@dataclass(frozen=True)
class LifecycleEstimate:
    energies_j: dict[str, float]
    total_j: float
    split: PhaseSplit
    reference_splits: dict[str, dict[str, float]] = field(
        default_factory=lambda: {
            "compute_cycle_10_20_70": dict(COMPUTE_CYCLE_SPLIT),
            "lifecycle_31_29_40": dict(LIFECYCLE_SPLIT),
        }
    )

    def comparison_rows(self) -> list[dict]:
        """Side-by-side rows: this estimate against each reference split."""
        mine = self.split.as_dict()
        rows = []
        for phase, pct in mine.items():
            rows.append({"split": "estimated", "phase": phase, "pct": pct})
        for name, ref in self.reference_splits.items():
            for phase, pct in ref.items():
                rows.append({"split": name, "phase": phase, "pct": pct})
        return rows


def lifecycle_estimate(
    e_experimentation: float,
    e_training: float,
    e_inference_per_unit: float,
    expected_units: float,
    e_data: float = 0.0,
) -> LifecycleEstimate:
    """Absolute lifecycle energies plus the percentage split.

    Inference is a rate times an expected deployment volume — the lifecycle
    question is dominated by how often the model will be served.
    """
    for name, value in (
        ("e_experimentation", e_experimentation),
        ("e_training", e_training),
        ("e_inference_per_unit", e_inference_per_unit),
        ("expected_units", expected_units),
        ("e_data", e_data),
    ):
        if value < 0:
            raise OutOfRange(f"{name} must be >= 0, got {value}")
    e_inference = e_inference_per_unit * expected_units
    total = e_data + e_experimentation + e_training + e_inference
    if total == 0.0:
        split = PhaseSplit(0.0, 0.0, 0.0, 0.0)
    else:
        split = PhaseSplit(
            data_pct=100.0 * e_data / total,
            experimentation_pct=100.0 * e_experimentation / total,
            training_pct=100.0 * e_training / total,
            inference_pct=100.0 * e_inference / total,
        )
    return LifecycleEstimate(
        energies_j={
            "data": e_data,
            "experimentation": e_experimentation,
            "training": e_training,
            "inference": e_inference,
        },
        total_j=total,
        split=split,
    )


JOULES_PER_KWH = 3.6e6


def carbon_estimate(joules: float, intensity_g_per_kwh: float) -> float:
    """Grams CO2-equivalent for an energy total at a given grid intensity."""
    if joules < 0:
        raise OutOfRange(f"joules must be >= 0, got {joules}")
    if intensity_g_per_kwh < 0:
        raise OutOfRange(f"intensity must be >= 0, got {intensity_g_per_kwh}")
    return joules / JOULES_PER_KWH * intensity_g_per_kwh


# --- report bundle ---


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def correlation_table(
    runs: Sequence[RunSummary], metrics: Sequence[str] = tuple(METRICS)
) -> list[dict]:
    """One row per (metric, hardware group) correlation that could be computed."""
    rows = []
    for metric in metrics:
        try:
            per_group = correlate_by_group(runs, metric)
        except (InsufficientRuns, DegenerateVariance, DegenerateInput):
            continue
        for group, result in per_group.items():
            rows.append(
                {
                    "metric": metric,
                    "group": group,
                    "pearson_r": result.pearson_r,
                    "spearman_rho": result.spearman_rho,
                    "n": result.n,
                }
            )
    return rows


def run_table(runs: Sequence[RunSummary]) -> list[dict]:
    rows = []
    for run in runs:
        ratio = _metric_macs_per_param(run)
        rows.append(
            {
                "run_id": run.run_id,
                "phase": run.phase,
                "hardware_hash": run.hardware_hash,
                "total_adjusted_j": run.total_adjusted_j,
                "duration_s": run.duration_s,
                "mean_power_w": "" if run.mean_power_w is None else run.mean_power_w,
                "mean_gpu_util": "" if run.mean_gpu_util is None else run.mean_gpu_util,
                "batch_size": "" if run.batch_size is None else run.batch_size,
                "model": run.manifest.name if run.manifest else "",
                "macs_per_sample": run.manifest.macs_per_sample if run.manifest else "",
                "total_params": run.manifest.total_params if run.manifest else "",
                "macs_per_param": "" if ratio is None else ratio,
            }
        )
    return rows


def _plot_scatter(path: Path, xs, ys, model: EnergyModel | None, xlabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(xs, ys, s=24)
    if model is not None and xs:
        lo, hi = min(xs), max(xs)
        ax.plot(
            [lo, hi],
            [model.predict(lo), model.predict(hi)],
            linestyle="--",
            label=f"OLS (r²={model.r_squared:.3f})",
        )
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel("idle-adjusted energy (J)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_sweep(path: Path, summary: SweepSummary) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [p.batch_size for p in summary.points]
    ys = [p.total_energy for p in summary.points]
    ax.plot(xs, ys, marker="o")
    ax.axvline(summary.best_batch_size, linestyle=":", label="minimum")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size")
    ax.set_ylabel("total energy (J)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_report_bundle(
    out_dir: str | Path,
    runs: Sequence[RunSummary],
    sweep: SweepSummary | None = None,
    lifecycle: LifecycleEstimate | None = None,
    carbon_intensity: float | None = None,
    plots: bool = True,
) -> dict:
    """CSV tables, a JSON summary, and SVG charts for a run collection.

    Returns the summary dict that was written. Sections without enough data
    are omitted rather than failing the whole bundle.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"n_runs": len(runs)}

    rows = run_table(runs)
    write_csv(out / "runs.csv", rows)

    corr_rows = correlation_table(runs)
    write_csv(out / "correlations.csv", corr_rows)
    summary["correlations"] = corr_rows

    model = None
    try:
        model = fit_energy_model(runs)
        summary["energy_model"] = model.to_dict()
    except (InsufficientRuns, DegenerateVariance):
        summary["energy_model"] = None

    if sweep is not None:
        write_csv(out / "batch_sweep.csv", sweep.to_rows())
        summary["batch_sweep"] = {
            "best_batch_size": sweep.best_batch_size,
            "min_energy_j": sweep.min_energy,
        }

    if lifecycle is not None:
        write_csv(out / "lifecycle.csv", lifecycle.comparison_rows())
        summary["lifecycle"] = {
            "total_j": lifecycle.total_j,
            "split": lifecycle.split.as_dict(),
        }
        if carbon_intensity is not None:
            summary["carbon_g"] = carbon_estimate(lifecycle.total_j, carbon_intensity)

    total_j = sum(run.total_adjusted_j for run in runs)
    summary["total_adjusted_j"] = total_j
    if carbon_intensity is not None:
        summary["carbon_intensity_g_per_kwh"] = carbon_intensity
        summary.setdefault("carbon_g", carbon_estimate(total_j, carbon_intensity))

    if plots:
        pairs = [
            (_metric_macs_per_param(run), run.total_adjusted_j)
            for run in runs
            if _metric_macs_per_param(run) is not None
        ]
        if len(pairs) >= 2:
            _plot_scatter(
                out / "energy_vs_macs_per_param.svg",
                [p[0] for p in pairs],
                [p[1] for p in pairs],
                model,
                "MACs per parameter",
            )
        if sweep is not None:
            _plot_sweep(out / "batch_sweep.svg", sweep)

    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary
