"""Shared builders: synthetic traces, replay CSV files, fixture workloads."""

from __future__ import annotations

import json
import textwrap
from pathlib import Path

import pytest

from joulemetre.models import ModelManifest
from joulemetre.telemetry.samples import Channel, PowerSample
from joulemetre.trace import PowerTrace

DT = 0.1
DT_NS = 100_000_000


def build_trace(
    channel_watts: dict, delta_t: float = DT, start_ns: int = 0
) -> PowerTrace:
    """PowerTrace from {channel: [watts,...]}, sampled on the nominal grid."""
    dt_ns = round(delta_t * 1e9)
    samples = []
    for channel, watts in channel_watts.items():
        channel = Channel(channel)
        for i, w in enumerate(watts):
            samples.append(PowerSample(start_ns + i * dt_ns, channel, float(w)))
    return PowerTrace.from_samples(samples, delta_t=delta_t)


def write_power_csv(path: Path, rows) -> Path:
    """rows: iterable of (t_ns, channel str, watts)."""
    lines = ["t_ns,channel,watts"]
    lines += [f"{t},{c},{w!r}" for t, c, w in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_util_csv(path: Path, rows) -> Path:
    lines = ["t_ns,channel,util"]
    lines += [f"{t},{c},{u!r}" for t, c, u in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def constant_rows(n: int, watts_by_channel: dict, dt_ns: int = DT_NS, start_ns: int = 0):
    rows = []
    for i in range(n):
        for channel, watts in watts_by_channel.items():
            rows.append((start_ns + i * dt_ns, channel, watts))
    return rows


def write_fixture_workload(path: Path, marker_objs: list[dict]) -> Path:
    """A workload script that emits the given marker objects and exits 0.

    Markers carry explicit t_ns values, so under a replay source they land
    deterministically on the trace timeline.
    """
    script = textwrap.dedent(
        """
        import json, os, sys

        markers = json.loads(sys.argv[1])
        sink = os.environ["JM_MARKER_PIPE"]
        with open(sink, "w") as fh:
            for obj in markers:
                fh.write(json.dumps(obj, separators=(",", ":")) + "\\n")
                fh.flush()
        print("workload finished")
        """
    ).strip()
    path.write_text(script + "\n", encoding="utf-8")
    return path


def marker_args(marker_objs: list[dict]) -> str:
    return json.dumps(marker_objs)


def three_epoch_markers(epoch_ns: int = 3_000_000_000, end_ns: int = 9_900_000_000):
    objs = [{"t_ns": 0, "kind": "run_start"}]
    for e in range(3):
        objs.append({"t_ns": e * epoch_ns, "kind": "epoch_start", "index": e})
        objs.append({"t_ns": (e + 1) * epoch_ns, "kind": "epoch_end", "index": e})
    objs.append({"t_ns": end_ns, "kind": "run_end"})
    return objs


@pytest.fixture
def replay_env(tmp_path: Path):
    """An idle replay, a 10 s workload replay, and a 3-epoch fixture workload."""
    idle = write_power_csv(
        tmp_path / "idle.csv",
        constant_rows(600, {"CPU": 20.0, "GPU": 50.0}),
    )
    run = write_power_csv(
        tmp_path / "run.csv",
        constant_rows(100, {"CPU": 100.0, "GPU": 200.0}),
    )
    workload = write_fixture_workload(tmp_path / "workload.py", [])
    return {
        "dir": tmp_path,
        "idle": idle,
        "run": run,
        "workload": workload,
        "runs_dir": tmp_path / "runs",
        "markers": three_epoch_markers(),
    }


# --- the 16-run planted correlation fixture ---
#
# Energies are an exact linear function of MACs-per-parameter, so that
# correlation is perfect by construction; parameter counts vary independently
# of the ratio, which scrambles the raw-MAC ranking and drags its correlation
# strictly below.

PLANTED_MPP = list(range(10, 26))  # 16 models
PLANTED_PARAMS = [
    1_000_000, 1_150_000, 1_450_000, 1_300_000,
    1_900_000, 1_750_000, 3_100_000, 2_650_000,
    2_200_000, 2_350_000, 2_950_000, 2_500_000,
    2_800_000, 1_600_000, 2_050_000, 3_250_000,
]
PLANTED_ENERGY_PER_MPP = 5.0


def planted_manifests() -> list[ModelManifest]:
    out = []
    for i, (mpp, params) in enumerate(zip(PLANTED_MPP, PLANTED_PARAMS)):
        out.append(
            ModelManifest(
                name=f"model-{i:02d}",
                total_params=params,
                trainable_params=params,
                buffer_bytes=0,
                model_size_bytes=4 * params,
                macs_per_sample=mpp * params,
                source="declared",
            )
        )
    return out


def planted_runs():
    from joulemetre.analysis import RunSummary

    runs = []
    for i, manifest in enumerate(planted_manifests()):
        mpp = PLANTED_MPP[i]
        runs.append(
            RunSummary(
                run_id=f"run-{i:02d}",
                total_adjusted_j=PLANTED_ENERGY_PER_MPP * mpp,
                duration_s=60.0 + i,
                hardware_hash="hc-fixture",
                batch_size=None,
                manifest=manifest,
            )
        )
    return runs
