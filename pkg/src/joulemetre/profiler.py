"""Workload supervision: sample power around a child process and account it.

Two source modes share one pipeline:

* hardware — sample live counters, launch the workload, ingest markers over a
  named pipe, stop sampling after exit. The sampler starts PRE_PAD_S before
  launch and stops POST_PAD_S after exit; the padding is excluded from the
  energy total by run_start/run_end markers synthesised at process start and
  exit (child-supplied run markers win).
* replay:<csv> — the trace is read from file and the timeline is the trace's
  own. Marker timestamps from the child are taken verbatim (no clock offset),
  and run_start/run_end default to the trace span. Replays are deterministic:
  the same trace and markers reproduce the energy report bit for bit.

Clock sync: a live child's monotonic clock may have an arbitrary epoch (e.g.
a Node process), so adapters send a clock_sync marker first; the offset
between its timestamp and our receive time calibrates all subsequent marker
times onto the profiler's clock. Python children sharing CLOCK_MONOTONIC
need no sync and none is required.

Crash safety: the record file is written with status "running" before the
workload starts and atomically replaced at completion, so a killed profiler
never leaves a success-marked record.
"""

from __future__ import annotations

import os
import select
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import energy
from .errors import (
    ConfigError,
    CounterUnavailable,
    DeviceUnavailable,
    JoulemetreError,
    MarkerPipeBroken,
    ParseError,
    WorkloadDetected,
    WorkloadFailed,
)
from .markers import (
    MARKER_PIPE_ENV,
    MarkerEvent,
    MarkerKind,
    parse_marker_line,
    write_marker_file,
)
from .runstore import (
    MARKERS_FILE,
    POWER_FILE,
    RECORD_FILE,
    STATUS_ERROR,
    STATUS_INTERRUPTED,
    STATUS_RUNNING,
    STATUS_SUCCESS,
    STATUS_WORKLOAD_FAILED,
    STDOUT_FILE,
    UTIL_FILE,
    RunConfig,
    RunRecord,
    RunStore,
)
from .telemetry import (
    Channel,
    CounterPowerSource,
    InstantPowerSource,
    PowerSampler,
    UtilChannel,
    UtilSource,
    dram_power,
    find_cpu_reader,
    find_dram_reader,
    replay_sampler,
    tdp_linear_estimate,
)
from .trace import (
    PowerTrace,
    UtilTrace,
    read_power_trace,
    read_util_trace,
    write_power_trace,
    write_util_trace,
)

MANIFEST_OUT_ENV = "JM_MANIFEST_OUT"

PRE_PAD_S = 2.0
POST_PAD_S = 2.0


# --- marker transport ---


class MarkerCollector:
    """Receives marker lines from the child over a FIFO (file fallback).

    Each parsed event is paired with its receive time on the profiler clock,
    which is what clock_sync calibration needs.
    """

    def __init__(self, path: Path):
        self.path = path
        self.is_pipe = False
        self.events: list[tuple[int, MarkerEvent]] = []
        self.broken = False
        self.notes: list[str] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._fd: int | None = None
        try:
            os.mkfifo(self.path)
            self.is_pipe = True
        except (OSError, AttributeError) as exc:
            # No FIFO support here; the child appends to a regular file and
            # we read it once at shutdown. Receive times degrade to the read
            # time, so clock_sync is meaningless over this transport.
            self.notes.append(f"marker pipe unavailable ({exc}); using a plain file")
            self.path.touch()

    def start(self) -> None:
        if not self.is_pipe:
            return
        # O_RDWR keeps the read end open across writer churn: open() does not
        # block waiting for a writer and EOF never tears the stream down
        # between the child's open/close cycles.
        self._fd = os.open(self.path, os.O_RDWR | os.O_NONBLOCK)
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self) -> None:
        buf = b""
        while True:
            stopping = self._stop.is_set()
            try:
                ready, _, _ = select.select([self._fd], [], [], 0.05)
            except OSError:
                self.broken = True
                return
            if ready:
                try:
                    chunk = os.read(self._fd, 65536)
                except BlockingIOError:
                    chunk = b""
                except OSError:
                    self.broken = True
                    return
                if chunk:
                    buf += chunk
                    *lines, buf = buf.split(b"\n")
                    now = time.monotonic_ns()
                    for raw in lines:
                        self._ingest(raw.decode("utf-8", "replace"), now)
                    continue  # drain until quiet before honouring stop
            if stopping:
                if buf.strip():
                    self._ingest(buf.decode("utf-8", "replace"), time.monotonic_ns())
                return

    def _ingest(self, line: str, received_ns: int) -> None:
        if not line.strip():
            return
        try:
            event = parse_marker_line(line)
        except ParseError as exc:
            self.broken = True
            self.notes.append(f"bad marker line: {exc}")
            return
        self.events.append((received_ns, event))

    def stop(self) -> list[tuple[int, MarkerEvent]]:
        if self.is_pipe:
            self._stop.set()
            if self._thread is not None:
                self._thread.join(timeout=5.0)
                if self._thread.is_alive():
                    self.broken = True
                    self.notes.append("marker drain thread failed to stop")
            if self._fd is not None:
                os.close(self._fd)
        else:
            now = time.monotonic_ns()
            try:
                for line in self.path.read_text(encoding="utf-8").splitlines():
                    self._ingest(line, now)
            except OSError as exc:
                self.broken = True
                self.notes.append(f"marker file unreadable: {exc}")
        return list(self.events)

    def cleanup(self) -> None:
        try:
            self.path.unlink(missing_ok=True)
        except OSError:
            pass


def calibrate_markers(
    received: list[tuple[int, MarkerEvent]], apply_offset: bool
) -> tuple[list[MarkerEvent], float | None]:
    """Shift child marker times onto the profiler clock via clock_sync.

    Returns (events without the sync marker, offset in seconds or None).
    With apply_offset=False (replay mode) timestamps pass through verbatim.
    """
    offset_ns = 0
    offset_s = None
    if apply_offset:
        for received_ns, event in received:
            if event.kind is MarkerKind.CLOCK_SYNC:
                offset_ns = received_ns - event.t_ns
                offset_s = offset_ns / 1e9
                break
    out = []
    for _, event in received:
        if event.kind is MarkerKind.CLOCK_SYNC:
            continue
        out.append(replace(event, t_ns=event.t_ns + offset_ns))
    return out, offset_s


# --- live source assembly ---


def build_power_sources(config: RunConfig) -> tuple[list, list, list[str]]:
    """(power sources, util sources, warnings) for live hardware sampling.

    CPU falls back from the energy counter to the utilisation-scaled TDP
    estimate (documented as inferior); DRAM falls back to the analytic
    capacitive model when DIMMs are configured; a missing GPU simply omits
    the channel rather than recording zeros.
    """
    import psutil

    hw = config.hardware
    warnings: list[str] = []
    power_sources: list = []
    util_sources: list = []

    try:
        cpu_reader = find_cpu_reader()
        power_sources.append(
            CounterPowerSource(Channel.CPU, cpu_reader.read)
        )
    except CounterUnavailable as exc:
        warnings.append(
            f"cpu energy counter unavailable ({exc}); falling back to the "
            f"utilisation x TDP estimate, which ignores DVFS and idle states"
        )
        psutil.cpu_percent(interval=None)  # prime the diff-based reading
        power_sources.append(
            InstantPowerSource(
                Channel.CPU,
                lambda: tdp_linear_estimate(
                    psutil.cpu_percent(interval=None) / 100.0, hw.cpu_tdp
                ),
            )
        )

    try:
        from .telemetry.nvml import NvmlGpu

        gpu = NvmlGpu(0)
        power_sources.append(InstantPowerSource(Channel.GPU, gpu.power_watts))
        util_sources.append(UtilSource(UtilChannel.GPU, gpu.utilisation))
        util_sources.append(UtilSource(UtilChannel.GPU_VRAM, gpu.vram_utilisation))
    except DeviceUnavailable as exc:
        warnings.append(f"gpu channel omitted: {exc}")

    try:
        dram_reader = find_dram_reader()
        power_sources.append(CounterPowerSource(Channel.DRAM, dram_reader.read))
    except CounterUnavailable as exc:
        if hw.dimm.n_dimm > 0:
            constant = dram_power(hw.dimm)
            warnings.append(
                f"dram energy counter unavailable ({exc}); using the analytic "
                f"capacitive estimate ({constant:.2f} W constant)"
            )
            power_sources.append(
                InstantPowerSource(Channel.DRAM, lambda: constant)
            )
        else:
            warnings.append(f"dram channel omitted: {exc}")

    util_sources.append(
        UtilSource(
            UtilChannel.CPU, lambda: psutil.cpu_percent(interval=None) / 100.0
        )
    )
    return power_sources, util_sources, warnings


# --- the profiling run ---


@dataclass
class ProfileOutcome:
    record: RunRecord
    run_dir: Path


def _tee_command(
    command: tuple[str, ...],
    env: dict,
    log_path: Path,
    cwd: str | None = None,
) -> tuple[subprocess.Popen, object]:
    log = log_path.open("wb")
    try:
        proc = subprocess.Popen(
            list(command),
            stdout=log,
            stderr=subprocess.STDOUT,
            env=env,
            cwd=cwd,
        )
    except OSError as exc:
        log.close()
        raise WorkloadFailed(f"could not launch {command[0]!r}: {exc}") from None
    return proc, log


def _synthesise_run_markers(
    markers: list[MarkerEvent], start_ns: int, end_ns: int
) -> list[MarkerEvent]:
    """Add run_start/run_end only where the child did not provide them."""
    kinds = {m.kind for m in markers}
    out = list(markers)
    if MarkerKind.RUN_START not in kinds:
        out.append(MarkerEvent(t_ns=start_ns, kind=MarkerKind.RUN_START))
    if MarkerKind.RUN_END not in kinds:
        out.append(MarkerEvent(t_ns=end_ns, kind=MarkerKind.RUN_END))
    out.sort(key=lambda m: m.t_ns)
    return out


class Profiler:
    """Supervises exactly one workload per instance."""

    def __init__(
        self,
        store: RunStore,
        config: RunConfig,
        pre_pad_s: float = PRE_PAD_S,
        post_pad_s: float = POST_PAD_S,
    ):
        self.store = store
        self.config = config
        self.pre_pad_s = pre_pad_s
        self.post_pad_s = post_pad_s

    def run(self, baseline) -> ProfileOutcome:
        config = self.config
        run_id, run_dir = self.store.create_run_dir(config.phase)
        record = RunRecord(
            run_id=run_id,
            phase=config.phase,
            command=config.command,
            status=STATUS_RUNNING,
            source=config.source,
            delta_t=config.delta_t,
            start_unix=time.time(),
            pid=os.getpid(),
            batch_size=config.batch_size,
            config_hash=config.config_hash,
            hardware=config.hardware.to_dict(),
            manifest_path=config.manifest_path,
            files={
                "power": POWER_FILE,
                "markers": MARKERS_FILE,
                "stdout": STDOUT_FILE,
                "record": RECORD_FILE,
            },
        )
        self.store.write_record(record)

        interrupted = threading.Event()
        old_handler = None
        if threading.current_thread() is threading.main_thread():
            def _on_term(signum, frame):
                interrupted.set()
                raise KeyboardInterrupt

            old_handler = signal.signal(signal.SIGTERM, _on_term)
        try:
            outcome = self._supervise(record, run_dir, baseline)
            self.store.write_record(outcome.record)
            return outcome
        except WorkloadFailed as exc:
            record = replace(
                record,
                status=STATUS_WORKLOAD_FAILED,
                end_unix=time.time(),
                exit_status=exc.exit_status,
                warnings=record.warnings + (str(exc),),
            )
            self.store.write_record(record)
            raise
        except (KeyboardInterrupt, SystemExit):
            record = replace(
                record,
                status=STATUS_INTERRUPTED,
                end_unix=time.time(),
                warnings=record.warnings + ("profiler interrupted mid-run",),
            )
            self.store.write_record(record)
            raise
        except JoulemetreError as exc:
            record = replace(
                record,
                status=STATUS_ERROR,
                end_unix=time.time(),
                warnings=record.warnings + (str(exc),),
            )
            self.store.write_record(record)
            raise
        finally:
            if old_handler is not None:
                signal.signal(signal.SIGTERM, old_handler)

    # -- internals --

    def _supervise(self, record: RunRecord, run_dir: Path, baseline) -> ProfileOutcome:
        config = self.config
        replay = config.replay_paths()
        collector = MarkerCollector(run_dir / "marker.pipe")
        env = dict(os.environ)
        env[MARKER_PIPE_ENV] = str(collector.path)
        env[MANIFEST_OUT_ENV] = str(run_dir / "manifest.json")
        warnings: list[str] = list(collector.notes)

        try:
            if replay is not None:
                result, received, exit_status = self._run_replay(
                    replay, collector, env, run_dir
                )
                markers, offset_s = calibrate_markers(received, apply_offset=False)
            else:
                result, received, exit_status, span = self._run_live(
                    collector, env, run_dir
                )
                markers, offset_s = calibrate_markers(received, apply_offset=True)
                markers = _synthesise_run_markers(markers, span[0], span[1])
        finally:
            collector.cleanup()

        trace = result.power_trace
        if replay is not None:
            # Virtual clock: the replay timeline bounds the run by default.
            if not trace.is_empty:
                markers = _synthesise_run_markers(
                    markers, trace.start_ns, trace.end_ns
                )
        warnings.extend(result.diagnostics.notes)
        if collector.broken:
            warnings.append("marker stream broken; epoch attribution may be partial")
            warnings.extend(n for n in collector.notes if n not in warnings)

        files = dict(record.files)
        write_power_trace(trace, run_dir / POWER_FILE)
        if result.util_trace is not None and result.util_trace.channels:
            write_util_trace(result.util_trace, run_dir / UTIL_FILE)
            files["util"] = UTIL_FILE
        write_marker_file(markers, run_dir / MARKERS_FILE)
        if offset_s is not None:
            warnings.append(f"marker clock offset calibrated: {offset_s:.6f} s")

        if exit_status != 0:
            raise WorkloadFailed(
                f"workload exited with status {exit_status}", exit_status=exit_status
            )

        report = energy.build_report(trace, baseline, markers)
        manifest_path = record.manifest_path
        if manifest_path is None and (run_dir / "manifest.json").exists():
            manifest_path = "manifest.json"
        final = replace(
            record,
            status=STATUS_SUCCESS,
            end_unix=time.time(),
            exit_status=exit_status,
            manifest_path=manifest_path,
            files=files,
            report=report,
            degraded=report.degraded or collector.broken,
            warnings=tuple(warnings) + report.warnings,
        )
        return ProfileOutcome(record=final, run_dir=run_dir)

    def _run_replay(self, replay, collector, env, run_dir):
        power_path, util_path = replay
        result = replay_sampler(
            power_path, delta_t=self.config.delta_t, util_path=util_path
        )
        collector.start()
        proc, log = _tee_command(self.config.command, env, run_dir / STDOUT_FILE)
        try:
            exit_status = proc.wait()
        finally:
            log.close()
            received = collector.stop()
        return result, received, exit_status

    def _run_live(self, collector, env, run_dir):
        power_sources, util_sources, warnings = build_power_sources(self.config)
        sampler = PowerSampler(
            power_sources, util_sources=util_sources, delta_t=self.config.delta_t
        )
        collector.start()
        sampler.start()
        try:
            time.sleep(self.pre_pad_s)
            launch_ns = time.monotonic_ns()
            proc, log = _tee_command(self.config.command, env, run_dir / STDOUT_FILE)
            try:
                exit_status = proc.wait()
            finally:
                log.close()
            exit_ns = time.monotonic_ns()
            time.sleep(self.post_pad_s)
        finally:
            result = sampler.stop()
            received = collector.stop()
        result.diagnostics.notes.extend(warnings)
        return result, received, exit_status, (launch_ns, exit_ns)


def run_idle(
    store: RunStore,
    config: RunConfig,
    duration_s: float,
    min_duration_s: float,
) -> tuple:
    """Measure (or replay) an idle window, cache the baseline, return it.

    The refusal for too-short windows happens before any sampling: there is
    no point holding the machine idle for a window we will reject.
    """
    if duration_s < min_duration_s:
        raise ConfigError(
            f"idle duration {duration_s:.0f}s is below the {min_duration_s:.0f}s "
            f"minimum; a shorter window gives an unusable baseline"
        )
    if store.active_run_pids():
        raise WorkloadDetected(
            "another profiled run is active in this runs directory"
        )
    replay = config.replay_paths()
    if replay is not None:
        result = replay_sampler(replay[0], delta_t=config.delta_t, util_path=replay[1])
    else:
        power_sources, util_sources, _ = build_power_sources(config)
        sampler = PowerSampler(
            power_sources, util_sources=util_sources, delta_t=config.delta_t
        )
        result = sampler.run_for(duration_s)
    baseline = energy.measure_idle(
        result.power_trace,
        min_duration_s=duration_s if replay is None else min_duration_s,
        config_hash=config.hardware.config_hash(),
    )
    path = store.save_baseline(baseline)
    return baseline, path


def resolve_baseline(
    store: RunStore, config: RunConfig, min_duration_s: float, auto_duration_s: float
) -> tuple:
    """Cached baseline for this hardware config, measuring one if absent.

    Replay sources cannot auto-measure (the replay file is the workload, not
    an idle window), so they fall back to a zero baseline plus a warning:
    the report degrades to gross energy rather than failing the run.
    """
    cached = store.load_baseline(config.hardware.config_hash())
    if cached is not None:
        return cached, None
    if config.replay_paths() is not None:
        return (
            energy.IdleBaseline.zero(),
            "no cached idle baseline for this hardware config; replay report "
            "is gross energy (run `joulemetre idle` with an idle replay first)",
        )
    baseline, _ = run_idle(store, replace(config, phase="idle", command=()),
                           auto_duration_s, min_duration_s)
    return baseline, "no cached idle baseline; measured one automatically"


def substitute_batch(command: tuple[str, ...], source: str, batch: int):
    """Inject a batch size into `{batch}` placeholders in command and source."""
    cmd = tuple(tok.replace("{batch}", str(batch)) for tok in command)
    src = source.replace("{batch}", str(batch))
    return cmd, src


def load_run_traces(
    run_dir: Path, delta_t: float
) -> tuple[PowerTrace, UtilTrace | None]:
    power = read_power_trace(run_dir / POWER_FILE, delta_t=delta_t)
    util_path = run_dir / UTIL_FILE
    util = read_util_trace(util_path, delta_t=delta_t) if util_path.exists() else None
    return power, util
