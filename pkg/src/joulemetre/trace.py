"""Finalised power/utilisation traces and their CSV wire format.

Trace files are UTF-8 CSV with LF line endings. Power traces carry the
header ``t_ns,channel,watts`` with channel in {CPU,GPU,DRAM}; utilisation
traces are identical in shape with a ``util`` column in [0,1]. Floats are
written with shortest round-trip formatting, so a written trace replays to
bit-identical values.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyTrace, NonMonotonicTimestamp, ParseError
from .telemetry.samples import (
    CHANNEL_ORDER,
    Channel,
    PowerSample,
    UtilChannel,
    UtilSample,
)

POWER_HEADER = "t_ns,channel,watts"
UTIL_HEADER = "t_ns,channel,util"


def _ordered_channels(channels: Iterable[Channel]) -> list[Channel]:
    present = set(channels)
    return [c for c in CHANNEL_ORDER if c in present]


@dataclass(frozen=True)
class PowerTrace:
    """Immutable, per-channel time-ordered power samples at nominal spacing delta_t."""

    channels: dict[Channel, tuple[PowerSample, ...]]
    delta_t: float
    start_ns: int = 0
    end_ns: int = 0

    def __post_init__(self):
        if self.delta_t <= 0:
            raise ParseError(f"delta_t must be > 0, got {self.delta_t}")
        for channel, samples in self.channels.items():
            prev = None
            for s in samples:
                if prev is not None and s.t_ns <= prev:
                    raise NonMonotonicTimestamp(channel.value, prev, s.t_ns)
                prev = s.t_ns

    @classmethod
    def from_samples(cls, samples: Iterable[PowerSample], delta_t: float) -> "PowerTrace":
        by_channel: dict[Channel, list[PowerSample]] = {}
        for s in samples:
            by_channel.setdefault(s.channel, []).append(s)
        frozen = {c: tuple(v) for c, v in by_channel.items()}
        if frozen:
            start = min(v[0].t_ns for v in frozen.values())
            end = max(v[-1].t_ns for v in frozen.values())
        else:
            start = end = 0
        return cls(channels=frozen, delta_t=delta_t, start_ns=start, end_ns=end)

    @property
    def is_empty(self) -> bool:
        return not any(self.channels.values())

    @property
    def delta_t_ns(self) -> int:
        return round(self.delta_t * 1e9)

    def present_channels(self) -> list[Channel]:
        return _ordered_channels(c for c, v in self.channels.items() if v)

    def sample_counts(self) -> dict[Channel, int]:
        return {c: len(self.channels[c]) for c in self.present_channels()}

    def duration_s(self) -> float:
        if self.is_empty:
            return 0.0
        return (self.end_ns - self.start_ns) / 1e9

    def clip(self, start_ns: int, end_ns: int) -> "PowerTrace":
        """Sub-trace of samples with start_ns <= t <= end_ns (both inclusive)."""
        clipped = {
            c: tuple(s for s in v if start_ns <= s.t_ns <= end_ns)
            for c, v in self.channels.items()
        }
        clipped = {c: v for c, v in clipped.items() if v}
        if clipped:
            start = min(v[0].t_ns for v in clipped.values())
            end = max(v[-1].t_ns for v in clipped.values())
        else:
            start = end = 0
        return PowerTrace(channels=clipped, delta_t=self.delta_t, start_ns=start, end_ns=end)

    def all_samples(self) -> list[PowerSample]:
        """Samples merged across channels, time-major, channel order as tiebreak."""
        order = {c: i for i, c in enumerate(CHANNEL_ORDER)}
        merged = [s for v in self.channels.values() for s in v]
        merged.sort(key=lambda s: (s.t_ns, order[s.channel]))
        return merged


@dataclass(frozen=True)
class UtilTrace:
    """Immutable utilisation samples, same shape and schedule as the power trace."""

    channels: dict[UtilChannel, tuple[UtilSample, ...]] = field(default_factory=dict)
    delta_t: float = 0.1

    def __post_init__(self):
        for channel, samples in self.channels.items():
            prev = None
            for s in samples:
                if prev is not None and s.t_ns <= prev:
                    raise NonMonotonicTimestamp(channel.value, prev, s.t_ns)
                prev = s.t_ns

    @classmethod
    def from_samples(cls, samples: Iterable[UtilSample], delta_t: float) -> "UtilTrace":
        by_channel: dict[UtilChannel, list[UtilSample]] = {}
        for s in samples:
            by_channel.setdefault(s.channel, []).append(s)
        return cls(channels={c: tuple(v) for c, v in by_channel.items()}, delta_t=delta_t)

    @property
    def is_empty(self) -> bool:
        return not any(self.channels.values())

    def mean_util(self, channel: UtilChannel) -> float | None:
        samples = self.channels.get(channel)
        if not samples:
            return None
        return sum(s.util for s in samples) / len(samples)


# --- CSV wire format ---


def replay_source(path: str | Path) -> Iterator[PowerSample]:
    """Stream samples from a recorded power trace, bit-identical across runs.

    Validates per-channel timestamp monotonicity while streaming. An empty
    file (header only, or zero bytes) yields nothing and is not an error.
    """
    path = Path(path)
    last_ns: dict[Channel, int] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if lineno == 1:
                if line != POWER_HEADER:
                    raise ParseError(
                        f"expected header {POWER_HEADER!r}, got {line!r}", line=1
                    )
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", line=lineno)
            try:
                t_ns = int(parts[0])
                channel = Channel(parts[1])
                watts = float(parts[2])
            except (ValueError, KeyError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if watts < 0:
                raise ParseError(f"negative power {watts}", line=lineno)
            prev = last_ns.get(channel)
            if prev is not None and t_ns <= prev:
                raise NonMonotonicTimestamp(channel.value, prev, t_ns)
            last_ns[channel] = t_ns
            yield PowerSample(t_ns=t_ns, channel=channel, watts=watts)


def read_power_trace(path: str | Path, delta_t: float) -> PowerTrace:
    return PowerTrace.from_samples(replay_source(path), delta_t=delta_t)


def write_power_trace(trace: PowerTrace, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    buf.write(POWER_HEADER + "\n")
    for s in trace.all_samples():
        buf.write(f"{s.t_ns},{s.channel.value},{s.watts!r}\n")
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_util_trace(path: str | Path, delta_t: float) -> UtilTrace:
    path = Path(path)
    samples: list[UtilSample] = []
    last_ns: dict[UtilChannel, int] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if lineno == 1:
                if line != UTIL_HEADER:
                    raise ParseError(
                        f"expected header {UTIL_HEADER!r}, got {line!r}", line=1
                    )
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", line=lineno)
            try:
                t_ns = int(parts[0])
                channel = UtilChannel(parts[1])
                util = float(parts[2])
            except (ValueError, KeyError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            prev = last_ns.get(channel)
            if prev is not None and t_ns <= prev:
                raise NonMonotonicTimestamp(channel.value, prev, t_ns)
            last_ns[channel] = t_ns
            samples.append(UtilSample(t_ns=t_ns, channel=channel, util=util))
    return UtilTrace.from_samples(samples, delta_t=delta_t)


def write_util_trace(trace: UtilTrace, path: str | Path) -> None:
    path = Path(path)
    order = {c: i for i, c in enumerate(UtilChannel)}
    merged = [s for v in trace.channels.values() for s in v]
    merged.sort(key=lambda s: (s.t_ns, order[s.channel]))
    buf = io.StringIO()
    buf.write(UTIL_HEADER + "\n")
    for s in merged:
        buf.write(f"{s.t_ns},{s.channel.value},{s.util!r}\n")
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def require_nonempty(trace: PowerTrace) -> None:
    if trace.is_empty:
        raise EmptyTrace("trace has no samples")
