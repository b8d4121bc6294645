"""Run persistence: per-run directories, record files, and the baseline cache.

Layout under the runs directory:

    runs/
      <run_id>/
        record.json     status + config + energy report (see RECORD_SCHEMA)
        power.csv       sampled power trace
        util.csv        sampled utilisation trace (when collected)
        markers.jsonl   marker events as received (offset-corrected)
        stdout.log      workload stdout+stderr, teed, never parsed
      baselines/
        idle-<confighash>-<stamp>.json
      analysis/
        <stamp>/        report bundles

Crash safety: record.json is written atomically (tmp + rename) with status
"running" before the workload starts and replaced at completion. A killed
profiler therefore leaves either no record or a "running"/"interrupted" one.
Run IDs are claimed with an atomic mkdir, so concurrent profilers cannot
collide.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .energy import EnergyReport, IdleBaseline
from .errors import ConfigError, SchemaError
from .telemetry.samples import DEFAULT_DELTA_T, HardwareConfig

RECORD_SCHEMA_VERSION = 1

PHASES = ("experimentation", "training", "inference", "idle")

#: A cached idle baseline older than this is stale: ambient conditions and
#: background load drift on the scale of a day.
BASELINE_MAX_AGE_S = 24 * 3600.0

POWER_FILE = "power.csv"
UTIL_FILE = "util.csv"
MARKERS_FILE = "markers.jsonl"
STDOUT_FILE = "stdout.log"
RECORD_FILE = "record.json"


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to launch one supervised run."""

    phase: str
    command: tuple[str, ...] = ()
    source: str = "hardware"  # "hardware" or "replay:<power csv>[,<util csv>]"
    hardware: HardwareConfig = field(default_factory=HardwareConfig)
    delta_t: float = DEFAULT_DELTA_T
    batch_size: int | None = None
    manifest_path: str | None = None
    run_id: str | None = None
    config_hash: str = ""

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        if self.phase == "idle" and self.command:
            raise ConfigError("the idle phase measures quiescence; it takes no command")
        if self.phase != "idle" and not self.command:
            raise ConfigError(f"phase {self.phase!r} requires a command to supervise")
        if self.delta_t <= 0:
            raise ConfigError(f"delta_t must be > 0, got {self.delta_t}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def replay_paths(self) -> tuple[str, str | None] | None:
        """(power csv, optional util csv) when the source is a replay."""
        if not self.source.startswith("replay:"):
            return None
        spec = self.source[len("replay:") :]
        if not spec:
            raise ConfigError("replay source needs a file: replay:<power.csv>")
        if "," in spec:
            power, util = spec.split(",", 1)
            return power, util
        return spec, None


# Statuses a record can carry. "running" is the placeholder written before
# the workload starts; everything else is terminal.
STATUS_RUNNING = "running"
STATUS_SUCCESS = "success"
STATUS_WORKLOAD_FAILED = "workload_failed"
STATUS_INTERRUPTED = "interrupted"
STATUS_ERROR = "error"

_TERMINAL = (STATUS_SUCCESS, STATUS_WORKLOAD_FAILED, STATUS_INTERRUPTED, STATUS_ERROR)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    phase: str
    command: tuple[str, ...]
    status: str
    source: str
    delta_t: float
    start_unix: float
    end_unix: float | None = None
    exit_status: int | None = None
    pid: int | None = None
    batch_size: int | None = None
    config_hash: str = ""
    hardware: dict = field(default_factory=dict)
    manifest_path: str | None = None
    files: dict = field(default_factory=dict)
    report: EnergyReport | None = None
    degraded: bool = False
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status not in (STATUS_RUNNING,) + _TERMINAL:
            raise SchemaError(f"unknown record status {self.status!r}")
        if self.end_unix is not None and self.end_unix < self.start_unix:
            raise SchemaError("record end precedes start")
        if (self.report is not None) != (self.status == STATUS_SUCCESS):
            raise SchemaError("a record carries a report iff it succeeded")

    def to_dict(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "run_id": self.run_id,
            "phase": self.phase,
            "command": list(self.command),
            "status": self.status,
            "source": self.source,
            "delta_t": self.delta_t,
            "start_unix": self.start_unix,
            "end_unix": self.end_unix,
            "exit_status": self.exit_status,
            "pid": self.pid,
            "batch_size": self.batch_size,
            "config_hash": self.config_hash,
            "hardware": dict(self.hardware),
            "manifest_path": self.manifest_path,
            "files": dict(self.files),
            "report": self.report.to_dict() if self.report else None,
            "degraded": self.degraded,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema_version") != RECORD_SCHEMA_VERSION:
            raise SchemaError(
                f"record schema_version {d.get('schema_version')!r} unsupported"
            )
        report = d.get("report")
        return cls(
            run_id=d["run_id"],
            phase=d["phase"],
            command=tuple(d.get("command", ())),
            status=d["status"],
            source=d.get("source", "hardware"),
            delta_t=d.get("delta_t", DEFAULT_DELTA_T),
            start_unix=d["start_unix"],
            end_unix=d.get("end_unix"),
            exit_status=d.get("exit_status"),
            pid=d.get("pid"),
            batch_size=d.get("batch_size"),
            config_hash=d.get("config_hash", ""),
            hardware=d.get("hardware", {}),
            manifest_path=d.get("manifest_path"),
            files=d.get("files", {}),
            report=EnergyReport.from_dict(report) if report else None,
            degraded=d.get("degraded", False),
            warnings=tuple(d.get("warnings", ())),
        )


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class RunStore:
    """One runs directory; safe for concurrent profiler processes."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- run directories --

    def create_run_dir(self, phase: str) -> tuple[str, Path]:
        """Claim a fresh run ID. mkdir is atomic, so two profilers racing for
        the same second get distinct suffixes instead of a shared directory."""
        stamp = time.strftime("%Y%m%dT%H%M%S")
        for attempt in range(10000):
            suffix = f"-{attempt:04d}" if attempt else ""
            run_id = f"{stamp}-{phase}{suffix}"
            path = self.root / run_id
            try:
                path.mkdir(parents=True, exist_ok=False)
            except FileExistsError:
                continue
            return run_id, path
        raise ConfigError(f"could not allocate a run id under {self.root}")

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def write_record(self, record: RunRecord) -> Path:
        path = self.run_dir(record.run_id) / RECORD_FILE
        _atomic_write(path, json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def load_record(self, run_id: str) -> RunRecord:
        path = self.run_dir(run_id) / RECORD_FILE
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"no record at {path}") from None
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
        return RunRecord.from_dict(data)

    def iter_records(self) -> list[RunRecord]:
        records = []
        for entry in sorted(self.root.iterdir()):
            if not entry.is_dir() or entry.name in ("baselines", "analysis"):
                continue
            if not (entry / RECORD_FILE).exists():
                continue
            try:
                records.append(self.load_record(entry.name))
            except SchemaError:
                continue
        return records

    def active_run_pids(self) -> list[int]:
        """PIDs of records still marked running whose process is alive."""
        pids = []
        for record in self.iter_records():
            if record.status != STATUS_RUNNING or record.pid is None:
                continue
            try:
                os.kill(record.pid, 0)
            except (ProcessLookupError, PermissionError):
                continue
            pids.append(record.pid)
        return pids

    # -- baseline cache --

    @property
    def baselines_dir(self) -> Path:
        return self.root / "baselines"

    def save_baseline(self, baseline: IdleBaseline) -> Path:
        self.baselines_dir.mkdir(parents=True, exist_ok=True)
        stamp = time.strftime("%Y%m%dT%H%M%S")
        key = baseline.config_hash or "default"
        path = self.baselines_dir / f"idle-{key}-{stamp}.json"
        # Same-second saves are legal; newest-wins ordering is by mtime below.
        counter = 0
        while path.exists():
            counter += 1
            path = self.baselines_dir / f"idle-{key}-{stamp}-{counter:02d}.json"
        _atomic_write(path, json.dumps(baseline.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def load_baseline(
        self, config_hash: str, max_age_s: float = BASELINE_MAX_AGE_S
    ) -> IdleBaseline | None:
        """Freshest cached baseline for a hardware config, or None.

        Older baselines are retained on disk but never returned once expired.
        """
        if not self.baselines_dir.is_dir():
            return None
        key = config_hash or "default"
        candidates = sorted(
            self.baselines_dir.glob(f"idle-{key}-*.json"),
            key=lambda p: p.stat().st_mtime,
            reverse=True,
        )
        now = time.time()
        for path in candidates:
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
                baseline = IdleBaseline.from_dict(data)
            except (json.JSONDecodeError, KeyError, ValueError):
                continue
            created = baseline.created_unix or path.stat().st_mtime
            if now - created <= max_age_s:
                return baseline
        return None

    # -- analysis output --

    def new_analysis_dir(self) -> Path:
        stamp = time.strftime("%Y%m%dT%H%M%S")
        path = self.root / "analysis" / stamp
        counter = 0
        while path.exists():
            counter += 1
            path = self.root / "analysis" / f"{stamp}-{counter:02d}"
        path.mkdir(parents=True)
        return path


def summarise_record(record: RunRecord, manifest=None, mean_gpu_util=None):
    """RunRecord -> analysis.RunSummary (success-status records only)."""
    from .analysis import RunSummary

    report = record.report
    if report is None:
        raise ConfigError(f"run {record.run_id} has no report to summarise")
    if record.hardware:
        group = HardwareConfig.from_dict(record.hardware).config_hash()
    else:
        group = record.config_hash
    duration = report.duration_s
    mean_power = report.total_gross_j / duration if duration > 0 else None
    return RunSummary(
        run_id=record.run_id,
        total_adjusted_j=report.total_adjusted_j,
        duration_s=duration,
        hardware_hash=group,
        mean_gpu_util=mean_gpu_util,
        mean_power_w=mean_power,
        batch_size=record.batch_size,
        phase=record.phase,
        manifest=manifest,
    )
