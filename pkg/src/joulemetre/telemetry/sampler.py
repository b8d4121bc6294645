"""Periodic multi-channel sampling loop.

The sampler is the sole writer to its trace while running; `stop()` (or the
end of `run_for`) finalises the trace, after which it is immutable and safe
to share across threads. Deadlines are absolute (t0 + k*delta_t), so timing
jitter in one tick does not accumulate into drift.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from ..errors import AllChannelsUnavailable, DeviceUnavailable
from ..trace import PowerTrace, UtilTrace, read_power_trace, read_util_trace
from .powercap import CounterReading, wraparound_delta
from .samples import Channel, PowerSample, UtilChannel, UtilSample


class InstantPowerSource:
    """A channel whose backend reports instantaneous watts (GPU, DRAM model, TDP)."""

    def __init__(self, channel: Channel, read_watts: Callable[[], float]):
        self.channel = channel
        self._read_watts = read_watts

    def read(self, now_ns: int) -> float | None:
        return self._read_watts()


class CounterPowerSource:
    """A channel backed by a cumulative energy counter.

    Successive reads convert to watts as delta-energy over elapsed time, with
    single-wrap correction. The first tick yields no sample (no delta yet).
    More than one wrap inside a single interval is undetectable; that risk
    only becomes realistic at very coarse intervals, so it is flagged when
    delta_t exceeds one second.
    """

    def __init__(self, channel: Channel, read_counter: Callable[[], CounterReading]):
        self.channel = channel
        self._read_counter = read_counter
        self._prev: CounterReading | None = None
        self._prev_ns: int | None = None

    def read(self, now_ns: int) -> float | None:
        reading = self._read_counter()
        watts = None
        if self._prev is not None and now_ns > self._prev_ns:
            delta_uj = wraparound_delta(
                self._prev.microjoules, reading.microjoules, reading.ceiling
            )
            elapsed_s = (now_ns - self._prev_ns) / 1e9
            watts = (delta_uj / 1e6) / elapsed_s
        self._prev = reading
        self._prev_ns = now_ns
        return watts


class UtilSource:
    """A utilisation channel reporting a fraction in [0,1]."""

    def __init__(self, channel: UtilChannel, read_util: Callable[[], float]):
        self.channel = channel
        self._read_util = read_util

    def read(self, now_ns: int) -> float | None:
        return self._read_util()


@dataclass
class SamplerDiagnostics:
    sample_counts: dict[str, int] = field(default_factory=dict)
    mean_gap_s: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


@dataclass
class SamplerResult:
    power_trace: PowerTrace
    util_trace: UtilTrace
    diagnostics: SamplerDiagnostics


class PowerSampler:
    """Samples every configured channel at a fixed interval until stopped."""

    def __init__(
        self,
        power_sources: list,
        util_sources: list | None = None,
        delta_t: float = 0.1,
        clock: Callable[[], int] = time.monotonic_ns,
    ):
        if not power_sources:
            raise AllChannelsUnavailable("no power channel source available")
        if delta_t > 1.0 and any(
            isinstance(s, CounterPowerSource) for s in power_sources
        ):
            self._notes = [
                "delta_t > 1 s: multiple counter wraps within one interval "
                "would be undetectable"
            ]
        else:
            self._notes = []
        self._power_sources = list(power_sources)
        self._util_sources = list(util_sources or [])
        self.delta_t = delta_t
        self._clock = clock
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._power_samples: list[PowerSample] = []
        self._util_samples: list[UtilSample] = []
        self._result: SamplerResult | None = None

    def _tick(self, now_ns: int) -> None:
        dead = []
        for source in self._power_sources:
            try:
                watts = source.read(now_ns)
            except DeviceUnavailable:
                # Channel disappeared mid-run (driver reset): absent from this
                # timestamp on; gap handling happens at integration time.
                dead.append(source)
                self._notes.append(
                    f"channel {source.channel.value} unavailable from t={now_ns}"
                )
                continue
            if watts is not None:
                self._power_samples.append(
                    PowerSample(t_ns=now_ns, channel=source.channel, watts=max(watts, 0.0))
                )
        for source in dead:
            self._power_sources.remove(source)
        for source in self._util_sources:
            try:
                util = source.read(now_ns)
            except DeviceUnavailable:
                continue
            if util is not None:
                util = min(max(util, 0.0), 1.0)
                self._util_samples.append(
                    UtilSample(t_ns=now_ns, channel=source.channel, util=util)
                )

    def _loop(self) -> None:
        interval_ns = round(self.delta_t * 1e9)
        deadline = self._clock()
        while not self._stop.is_set():
            self._tick(self._clock())
            deadline += interval_ns
            wait_s = (deadline - self._clock()) / 1e9
            if wait_s > 0:
                self._stop.wait(wait_s)
            else:
                # Overran one or more intervals; skip ahead rather than
                # bursting to catch up.
                missed = (self._clock() - deadline) // interval_ns + 1
                deadline += missed * interval_ns

    def start(self) -> "PowerSampler":
        self._thread = threading.Thread(target=self._loop, daemon=True, name="jm-sampler")
        self._thread.start()
        return self

    def stop(self) -> SamplerResult:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
        return self._finalise()

    def run_for(self, duration_s: float) -> SamplerResult:
        self.start()
        time.sleep(duration_s)
        return self.stop()

    def _finalise(self) -> SamplerResult:
        if self._result is None:
            power = PowerTrace.from_samples(self._power_samples, delta_t=self.delta_t)
            util = UtilTrace.from_samples(self._util_samples, delta_t=self.delta_t)
            diag = SamplerDiagnostics(notes=list(self._notes))
            for channel, samples in power.channels.items():
                diag.sample_counts[channel.value] = len(samples)
                if len(samples) > 1:
                    span = samples[-1].t_ns - samples[0].t_ns
                    diag.mean_gap_s[channel.value] = span / (len(samples) - 1) / 1e9
            self._result = SamplerResult(power, util, diag)
        return self._result


def run_sampler(
    power_sources: list,
    delta_t: float,
    duration_s: float,
    util_sources: list | None = None,
    clock: Callable[[], int] = time.monotonic_ns,
) -> SamplerResult:
    """Sample every channel at interval delta_t for duration_s seconds."""
    sampler = PowerSampler(power_sources, util_sources, delta_t=delta_t, clock=clock)
    return sampler.run_for(duration_s)


def replay_sampler(
    power_path, delta_t: float, util_path=None
) -> SamplerResult:
    """Deterministic sampler substitute: trace contents come from recorded files."""
    power = read_power_trace(power_path, delta_t=delta_t)
    if util_path is not None:
        util = read_util_trace(util_path, delta_t=delta_t)
    else:
        util = UtilTrace(channels={}, delta_t=delta_t)
    diag = SamplerDiagnostics(
        sample_counts={c.value: n for c, n in power.sample_counts().items()},
        notes=["replay source: timestamps and values are recorded, not live"],
    )
    for channel, samples in power.channels.items():
        if len(samples) > 1:
            span = samples[-1].t_ns - samples[0].t_ns
            diag.mean_gap_s[channel.value] = span / (len(samples) - 1) / 1e9
    return SamplerResult(power, util, diag)
