"""Idle-adjusted energy accounting over finalised power traces.

Gross energy per channel is the left-rectangle cumulative sum P(t_i) * delta_t
over recorded intervals. The idle contribution is subtracted as mean idle
power times the covered workload duration, which is the only dimensionally
consistent way to reconcile an idle window of a different length with the
workload window. Trapezoidal integration exists as an opt-in only and is
never used for reports.

All operations here are pure computation over immutable traces: reentrant,
deterministic (fixed summation order), and safe to run in parallel.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    ChannelMismatch,
    DegenerateInput,
    EmptyTrace,
    MalformedMarkers,
    OutOfRange,
    OutOfSpan,
    WorkloadDetected,
)
from .markers import MarkerEvent, MarkerKind
from .telemetry.samples import CHANNEL_ORDER, Channel
from .trace import PowerTrace

# A gap of this many nominal intervals or more means the channel dropped out:
# beyond it we stop holding the last value and flag the trace degraded.
GAP_HOLD_LIMIT = 3


@dataclass(frozen=True)
class ChannelIntegration:
    channel: Channel
    gross_j: float
    interval_count: int
    covered_s: float
    degraded: bool


def _channel_intervals(
    samples, delta_t_ns: int
) -> tuple[list[tuple[int, float, int]], bool]:
    """Coverage per sample: (start_ns, watts, k intervals covered), plus degraded flag.

    Nominal spacing is one interval per sample. A gap below GAP_HOLD_LIMIT
    intervals is bridged by holding the last value for the nearest whole
    number of intervals; a larger gap contributes nothing and degrades the
    trace.
    """
    out = []
    degraded = False
    n = len(samples)
    for i, s in enumerate(samples):
        if i == n - 1:
            k = 1
        else:
            gap = samples[i + 1].t_ns - s.t_ns
            if gap >= GAP_HOLD_LIMIT * delta_t_ns:
                k = 1
                degraded = True
            else:
                k = max(1, round(gap / delta_t_ns))
        out.append((s.t_ns, s.watts, k))
    return out, degraded


def integrate_detailed(trace: PowerTrace) -> dict[Channel, ChannelIntegration]:
    if trace.is_empty:
        raise EmptyTrace("cannot integrate an empty trace")
    dt_ns = trace.delta_t_ns
    result: dict[Channel, ChannelIntegration] = {}
    for channel in trace.present_channels():
        intervals, degraded = _channel_intervals(trace.channels[channel], dt_ns)
        weighted = 0.0
        count = 0
        for _, watts, k in intervals:
            weighted += watts * k
            count += k
        result[channel] = ChannelIntegration(
            channel=channel,
            gross_j=trace.delta_t * weighted,
            interval_count=count,
            covered_s=count * trace.delta_t,
            degraded=degraded,
        )
    return result


def integrate_energy(trace: PowerTrace, rule: str = "left") -> dict[Channel, float]:
    """Per-channel gross joules.

    rule="left" is the report-grade path. rule="trapezoid" averages adjacent
    samples over their actual spacing; it is offered for comparison only.
    """
    if rule == "left":
        return {c: ci.gross_j for c, ci in integrate_detailed(trace).items()}
    if rule != "trapezoid":
        raise ValueError(f"unknown integration rule {rule!r}")
    if trace.is_empty:
        raise EmptyTrace("cannot integrate an empty trace")
    dt_ns = trace.delta_t_ns
    result: dict[Channel, float] = {}
    for channel in trace.present_channels():
        samples = trace.channels[channel]
        total = 0.0
        for a, b in zip(samples, samples[1:]):
            gap = b.t_ns - a.t_ns
            if gap < GAP_HOLD_LIMIT * dt_ns:
                total += 0.5 * (a.watts + b.watts) * (gap / 1e9)
        result[channel] = total
    return result


@dataclass(frozen=True)
class PowerAt:
    watts: float
    missing_channels: tuple[str, ...] = ()


def aggregate_power(trace: PowerTrace, t_ns: int) -> PowerAt:
    """Sum of per-channel powers at the interval containing t_ns.

    Channels with no interval covering t_ns contribute zero and are listed
    so reports can carry the coverage note.
    """
    if trace.is_empty:
        raise EmptyTrace("no samples")
    dt_ns = trace.delta_t_ns
    if not (trace.start_ns <= t_ns < trace.end_ns + dt_ns):
        raise OutOfSpan(
            f"t={t_ns} outside trace span [{trace.start_ns}, {trace.end_ns + dt_ns})"
        )
    total = 0.0
    missing = []
    for channel in trace.present_channels():
        intervals, _ = _channel_intervals(trace.channels[channel], dt_ns)
        hit = None
        for start, watts, k in intervals:
            if start <= t_ns < start + k * dt_ns:
                hit = watts
                break
        if hit is None:
            missing.append(channel.value)
        else:
            total += hit
    return PowerAt(watts=total, missing_channels=tuple(missing))


# --- idle baseline ---


@dataclass(frozen=True)
class IdleBaseline:
    """Per-channel mean idle power, the subtrahend of every energy report."""

    means_w: dict[Channel, float]
    idle_duration_s: float
    sample_counts: dict[Channel, int]
    config_hash: str = ""
    created_unix: float = 0.0

    def __post_init__(self):
        for channel, mean in self.means_w.items():
            if mean < 0:
                raise OutOfRange(f"idle mean for {channel.value} is negative")
        for channel, count in self.sample_counts.items():
            if count <= 0:
                raise OutOfRange(f"sample count for {channel.value} must be > 0")

    @classmethod
    def zero(cls) -> "IdleBaseline":
        """All-zero baseline: reports become gross-only. Used when no idle
        measurement exists; callers must surface the accompanying warning."""
        return cls(
            means_w={c: 0.0 for c in CHANNEL_ORDER},
            idle_duration_s=0.0,
            sample_counts={c: 1 for c in CHANNEL_ORDER},
        )

    @classmethod
    def from_trace(cls, trace: PowerTrace, config_hash: str = "") -> "IdleBaseline":
        if trace.is_empty:
            raise EmptyTrace("cannot build a baseline from an empty trace")
        dt_ns = trace.delta_t_ns
        means: dict[Channel, float] = {}
        counts: dict[Channel, int] = {}
        for channel in trace.present_channels():
            samples = trace.channels[channel]
            # The subtraction multiplies this mean by covered time, so a
            # sample held through k intervals must weigh k times as much;
            # a plain sample mean would bias baselines with uneven spacing.
            intervals, _ = _channel_intervals(samples, dt_ns)
            weighted = 0.0
            covered = 0
            for _, watts, k in intervals:
                weighted += watts * k
                covered += k
            means[channel] = weighted / covered
            counts[channel] = len(samples)
        detail = integrate_detailed(trace)
        duration = max(ci.covered_s for ci in detail.values())
        return cls(
            means_w=means,
            idle_duration_s=duration,
            sample_counts=counts,
            config_hash=config_hash,
            created_unix=time.time(),
        )

    @property
    def interval_count(self) -> int:
        return max(self.sample_counts.values(), default=0)

    def to_dict(self) -> dict:
        return {
            "means_w": {c.value: m for c, m in self.means_w.items()},
            "idle_duration_s": self.idle_duration_s,
            "sample_counts": {c.value: n for c, n in self.sample_counts.items()},
            "config_hash": self.config_hash,
            "created_unix": self.created_unix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdleBaseline":
        return cls(
            means_w={Channel(k): v for k, v in d["means_w"].items()},
            idle_duration_s=d["idle_duration_s"],
            sample_counts={Channel(k): v for k, v in d["sample_counts"].items()},
            config_hash=d.get("config_hash", ""),
            created_unix=d.get("created_unix", 0.0),
        )


#: Shortest idle window accepted by default; idle draw estimates from less
#: than this are too noisy to subtract.
DEFAULT_IDLE_MIN_S = 30.0


def measure_idle(
    trace: PowerTrace,
    min_duration_s: float = DEFAULT_IDLE_MIN_S,
    config_hash: str = "",
    workload_active: bool = False,
) -> IdleBaseline:
    """Build an IdleBaseline from a trace recorded with no workload running."""
    if workload_active:
        raise WorkloadDetected(
            "a supervised workload is active; idle measurement would be biased"
        )
    baseline = IdleBaseline.from_trace(trace, config_hash=config_hash)
    # One interval of slack absorbs scheduler jitter at the window edge.
    if baseline.idle_duration_s + trace.delta_t < min_duration_s:
        raise OutOfRange(
            f"idle window {baseline.idle_duration_s:.1f}s is below the "
            f"{min_duration_s:.0f}s minimum"
        )
    return baseline


# --- epoch markers ---


@dataclass(frozen=True)
class EpochSpan:
    index: int
    start_ns: int
    end_ns: int


def extract_epoch_spans(
    markers: Sequence[MarkerEvent],
) -> tuple[tuple[int, int] | None, list[EpochSpan]]:
    """Validated (run span, epoch spans) from a marker stream.

    Epochs must be non-overlapping, properly closed, and carry strictly
    increasing indices; run_start must precede run_end.
    """
    run_start = None
    run_end = None
    spans: list[EpochSpan] = []
    open_epoch: tuple[int, int] | None = None
    last_index: int | None = None
    last_t: int | None = None
    for m in markers:
        if m.kind in (MarkerKind.CLOCK_SYNC, MarkerKind.BATCH_DONE, MarkerKind.PHASE):
            continue
        if last_t is not None and m.t_ns < last_t:
            raise MalformedMarkers(
                f"marker {m.kind.value} at t={m.t_ns} is out of order"
            )
        last_t = m.t_ns
        if m.kind is MarkerKind.RUN_START:
            if run_start is None:
                run_start = m.t_ns
        elif m.kind is MarkerKind.RUN_END:
            run_end = m.t_ns
        elif m.kind is MarkerKind.EPOCH_START:
            if open_epoch is not None:
                raise MalformedMarkers(
                    f"epoch_start {m.index} while epoch {open_epoch[0]} is open"
                )
            if last_index is not None and m.index <= last_index:
                raise MalformedMarkers(
                    f"epoch index {m.index} does not follow {last_index}"
                )
            open_epoch = (m.index, m.t_ns)
        elif m.kind is MarkerKind.EPOCH_END:
            if open_epoch is None or open_epoch[0] != m.index:
                raise MalformedMarkers(f"epoch_end {m.index} without matching start")
            if m.t_ns <= open_epoch[1]:
                raise MalformedMarkers(f"epoch {m.index} ends at or before its start")
            spans.append(EpochSpan(m.index, open_epoch[1], m.t_ns))
            last_index = m.index
            open_epoch = None
    if open_epoch is not None:
        raise MalformedMarkers(f"epoch {open_epoch[0]} never closed")
    if run_start is not None and run_end is not None and run_end < run_start:
        raise MalformedMarkers("run_end precedes run_start")
    run_span = None
    if run_start is not None and run_end is not None:
        run_span = (run_start, run_end)
    return run_span, spans


@dataclass(frozen=True)
class EpochAttribution:
    per_epoch_j: tuple[float, ...]
    epoch_indices: tuple[int, ...]
    overhead_j: float


def attribute_epochs(
    trace: PowerTrace,
    markers: Sequence[MarkerEvent],
    baseline: IdleBaseline | None = None,
) -> EpochAttribution:
    """Assign each interval's idle-adjusted energy to the epoch containing its start.

    Intervals outside every epoch span pool into overhead. With no baseline
    the attribution is gross.
    """
    if trace.is_empty:
        raise EmptyTrace("cannot attribute an empty trace")
    _, spans = extract_epoch_spans(markers)
    dt_ns = trace.delta_t_ns
    dt_s = trace.delta_t
    buckets = [0.0] * len(spans)
    overhead = 0.0
    for channel in trace.present_channels():
        mean_idle = baseline.means_w.get(channel, 0.0) if baseline else 0.0
        intervals, _ = _channel_intervals(trace.channels[channel], dt_ns)
        for start, watts, k in intervals:
            for j in range(k):
                t = start + j * dt_ns
                piece = (watts - mean_idle) * dt_s
                for b, span in enumerate(spans):
                    if span.start_ns <= t < span.end_ns:
                        buckets[b] += piece
                        break
                else:
                    overhead += piece
    return EpochAttribution(
        per_epoch_j=tuple(buckets),
        epoch_indices=tuple(s.index for s in spans),
        overhead_j=overhead,
    )


# --- the energy report ---


@dataclass(frozen=True)
class EnergyReport:
    """Per-channel and total joules for one run, idle-adjusted."""

    gross_j: dict[str, float]
    adjusted_j: dict[str, float]
    total_gross_j: float
    total_adjusted_j: float
    per_epoch_j: tuple[float, ...]
    epoch_indices: tuple[int, ...]
    overhead_j: float
    duration_s: float
    delta_t: float
    interval_counts: dict[str, int]
    idle_interval_count: int
    baseline_w: dict[str, float]
    warnings: tuple[str, ...] = ()
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "gross_j": dict(self.gross_j),
            "adjusted_j": dict(self.adjusted_j),
            "total_gross_j": self.total_gross_j,
            "total_adjusted_j": self.total_adjusted_j,
            "per_epoch_j": list(self.per_epoch_j),
            "epoch_indices": list(self.epoch_indices),
            "overhead_j": self.overhead_j,
            "duration_s": self.duration_s,
            "delta_t": self.delta_t,
            "interval_counts": dict(self.interval_counts),
            "idle_interval_count": self.idle_interval_count,
            "baseline_w": dict(self.baseline_w),
            "warnings": list(self.warnings),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyReport":
        return cls(
            gross_j=dict(d["gross_j"]),
            adjusted_j=dict(d["adjusted_j"]),
            total_gross_j=d["total_gross_j"],
            total_adjusted_j=d["total_adjusted_j"],
            per_epoch_j=tuple(d["per_epoch_j"]),
            epoch_indices=tuple(d.get("epoch_indices", range(len(d["per_epoch_j"])))),
            overhead_j=d["overhead_j"],
            duration_s=d["duration_s"],
            delta_t=d["delta_t"],
            interval_counts=dict(d["interval_counts"]),
            idle_interval_count=d["idle_interval_count"],
            baseline_w=dict(d["baseline_w"]),
            warnings=tuple(d.get("warnings", ())),
            degraded=d.get("degraded", False),
        )

    def canonical_json(self) -> str:
        """Byte-stable serialisation; equal strings mean bit-identical reports."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def idle_adjusted_energy(
    trace: PowerTrace,
    baseline: IdleBaseline,
    markers: Sequence[MarkerEvent] = (),
) -> EnergyReport:
    """Energy report for a trace: gross minus idle contribution, per channel.

    Channels missing from the baseline stay gross-valued and are flagged.
    Negative adjusted energy (possible within counter variance) is reported
    as-is with a warning; clamping would bias sweep comparisons.
    """
    detail = integrate_detailed(trace)
    present = list(detail.keys())
    overlap = [c for c in present if c in baseline.means_w]
    if not overlap:
        raise ChannelMismatch(
            f"baseline channels {[c.value for c in baseline.means_w]} share nothing "
            f"with trace channels {[c.value for c in present]}"
        )
    warnings: list[str] = []
    gross: dict[str, float] = {}
    adjusted: dict[str, float] = {}
    counts: dict[str, int] = {}
    baseline_used: dict[str, float] = {}
    for channel in present:
        ci = detail[channel]
        gross[channel.value] = ci.gross_j
        counts[channel.value] = ci.interval_count
        if channel in baseline.means_w:
            mean = baseline.means_w[channel]
            adj = ci.gross_j - mean * ci.covered_s
            baseline_used[channel.value] = mean
            if adj < 0:
                warnings.append(
                    f"channel {channel.value}: idle-adjusted energy is negative "
                    f"({adj:.6g} J); within measurement variance, reported as-is"
                )
        else:
            adj = ci.gross_j
            warnings.append(
                f"channel {channel.value}: no idle baseline, gross-only"
            )
        adjusted[channel.value] = adj
    total_gross = 0.0
    total_adjusted = 0.0
    for channel in present:  # fixed order keeps totals bit-reproducible
        total_gross += gross[channel.value]
        total_adjusted += adjusted[channel.value]
    degraded = any(ci.degraded for ci in detail.values())
    if degraded:
        warnings.append("trace has gaps beyond the hold-last-value limit")
    attribution = attribute_epochs(trace, markers, baseline) if markers else None
    return EnergyReport(
        gross_j=gross,
        adjusted_j=adjusted,
        total_gross_j=total_gross,
        total_adjusted_j=total_adjusted,
        per_epoch_j=attribution.per_epoch_j if attribution else (),
        epoch_indices=attribution.epoch_indices if attribution else (),
        overhead_j=attribution.overhead_j if attribution else total_adjusted,
        duration_s=max(ci.covered_s for ci in detail.values()),
        delta_t=trace.delta_t,
        interval_counts=counts,
        idle_interval_count=baseline.interval_count,
        baseline_w=baseline_used,
        warnings=tuple(warnings),
        degraded=degraded,
    )


def build_report(
    trace: PowerTrace,
    baseline: IdleBaseline,
    markers: Sequence[MarkerEvent] = (),
) -> EnergyReport:
    """Full pipeline for one run: clip to the run span, adjust, attribute epochs."""
    run_span, _ = extract_epoch_spans(markers)
    if run_span is not None:
        clipped = trace.clip(run_span[0], run_span[1])
        if not clipped.is_empty:
            trace = clipped
    return idle_adjusted_energy(trace, baseline, markers)


# --- short-profile extrapolation ---


@dataclass(frozen=True)
class ExtrapolationModel:
    """Least-squares line from units of work done to cumulative joules."""

    slope: float
    intercept: float
    fit_r: float
    unit: str
    n_points: int

    def __post_init__(self):
        if not -1.0 <= self.fit_r <= 1.0:
            raise OutOfRange(f"fit_r must be in [-1,1], got {self.fit_r}")

    @property
    def flagged(self) -> bool:
        """True when the fit is too far from linear to trust for prediction."""
        return self.fit_r < FIT_R_FLAG_THRESHOLD

    def predict(self, target_units: float) -> float:
        if target_units < 0:
            raise OutOfRange(f"target_units must be >= 0, got {target_units}")
        return self.slope * target_units + self.intercept

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "fit_r": self.fit_r,
            "unit": self.unit,
            "n_points": self.n_points,
            "flagged": self.flagged,
        }


#: Time and cumulative energy track each other almost perfectly on real
#: hardware (r around 0.99); a fit below this threshold suggests the run is
#: not in the linear regime and the prediction is flagged.
FIT_R_FLAG_THRESHOLD = 0.95
FIT_R_REFERENCE = 0.99


def fit_extrapolation(
    points: Iterable[tuple[float, float]], unit: str = "epoch"
) -> ExtrapolationModel:
    """Ordinary least-squares line through (units_done, cumulative joules)."""
    pts = list(points)
    if len(pts) < 2:
        raise DegenerateInput("need at least 2 points")
    xs = [float(x) for x, _ in pts]
    ys = [float(y) for _, y in pts]
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    if sxx == 0.0:
        raise DegenerateInput("all x values are equal")
    slope = sxy / sxx
    intercept = mean_y - slope * mean_x
    if syy == 0.0:
        fit_r = 1.0  # flat data fits its own flat line exactly
    else:
        fit_r = sxy / math.sqrt(sxx * syy)
        fit_r = max(-1.0, min(1.0, fit_r))
    return ExtrapolationModel(
        slope=slope, intercept=intercept, fit_r=fit_r, unit=unit, n_points=n
    )


def predict_total(model: ExtrapolationModel, target_units: float) -> float:
    return model.predict(target_units)


def cumulative_epoch_points(per_epoch_j: Sequence[float]) -> list[tuple[float, float]]:
    """(epochs done, cumulative joules) pairs anchored at the origin.

    Zero epochs means zero workload energy by definition, so the origin is a
    real data point; it also lets a single-epoch profile define a line.
    """
    points = [(0.0, 0.0)]
    total = 0.0
    for i, e in enumerate(per_epoch_j, start=1):
        total += e
        points.append((float(i), total))
    return points
