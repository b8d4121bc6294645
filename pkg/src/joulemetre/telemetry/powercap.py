"""Reader for cumulative energy counters exposed through the powercap filesystem.

Counters live under ``<root>/intel-rapl:N/energy_uj`` (package domain) with
DRAM subzones at ``<root>/intel-rapl:N/intel-rapl:N:M``. The root defaults to
``/sys/class/powercap`` and can be overridden with the ``JM_POWERCAP_ROOT``
environment variable, which is how tests point the reader at fixture trees.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ..errors import CounterUnavailable, PermissionDenied

POWERCAP_ROOT_ENV = "JM_POWERCAP_ROOT"
DEFAULT_POWERCAP_ROOT = "/sys/class/powercap"

# Fallback ceiling when max_energy_range_uj is absent; RAPL counters are
# 32-bit microjoule registers on most parts but we stay permissive.
DEFAULT_CEILING_UJ = 2**62


def powercap_root() -> Path:
    return Path(os.environ.get(POWERCAP_ROOT_ENV, DEFAULT_POWERCAP_ROOT))


@dataclass(frozen=True)
class CounterReading:
    """A cumulative counter value plus the ceiling at which it wraps."""

    microjoules: int
    ceiling: int


def wraparound_delta(prev: int, curr: int, ceiling: int) -> int:
    """Energy delta in microjoules between two reads of a wrapping counter.

    Assumes at most one wrap between reads; multiple wraps within one
    interval are undetectable from the counter alone.
    """
    if curr >= prev:
        return curr - prev
    return ceiling - prev + curr


class PowercapReader:
    """Reads one powercap zone's cumulative energy counter."""

    def __init__(self, zone_dir: Path):
        self.zone_dir = zone_dir
        self._energy_file = zone_dir / "energy_uj"
        self._ceiling = self._read_ceiling()

    def _read_ceiling(self) -> int:
        max_file = self.zone_dir / "max_energy_range_uj"
        try:
            return int(max_file.read_text().strip())
        except (OSError, ValueError):
            return DEFAULT_CEILING_UJ

    def read(self) -> CounterReading:
        try:
            value = int(self._energy_file.read_text().strip())
        except PermissionError as exc:
            raise PermissionDenied(
                f"cannot read {self._energy_file}: run with elevated privileges "
                f"or grant read access to the powercap energy counters"
            ) from exc
        except FileNotFoundError as exc:
            raise CounterUnavailable(str(self._energy_file)) from exc
        except ValueError as exc:
            raise CounterUnavailable(
                f"unparseable counter in {self._energy_file}"
            ) from exc
        return CounterReading(value, self._ceiling)


def _package_zones(root: Path) -> list[Path]:
    # Top-level package zones only: intel-rapl:0, intel-rapl:1, ...
    return sorted(
        p for p in root.glob("intel-rapl:*") if p.is_dir() and p.name.count(":") == 1
    )


def _zone_name(zone: Path) -> str:
    try:
        return (zone / "name").read_text().strip()
    except OSError:
        return ""


def find_cpu_reader(root: Path | None = None) -> PowercapReader:
    """Locate the first readable CPU package counter.

    Raises CounterUnavailable when no register is exposed (callers fall back
    to the TDP-linear estimator) and PermissionDenied when one exists but is
    unreadable.
    """
    root = root or powercap_root()
    zones = _package_zones(root)
    if not zones:
        raise CounterUnavailable(f"no powercap zones under {root}")
    permission_error: PermissionDenied | None = None
    for zone in zones:
        reader = PowercapReader(zone)
        try:
            reader.read()
            return reader
        except PermissionDenied as exc:
            permission_error = exc
        except CounterUnavailable:
            continue
    if permission_error is not None:
        raise permission_error
    raise CounterUnavailable(f"no readable energy counter under {root}")


def find_dram_reader(root: Path | None = None) -> PowercapReader:
    """Locate a DRAM subzone counter, if the platform exposes one."""
    root = root or powercap_root()
    for zone in _package_zones(root):
        for sub in sorted(zone.glob("intel-rapl:*")):
            if _zone_name(sub) == "dram":
                reader = PowercapReader(sub)
                reader.read()  # surfaces PermissionDenied early
                return reader
    raise CounterUnavailable(f"no dram subzone under {root}")


def read_cpu_energy_register(root: Path | None = None) -> CounterReading:
    """One-shot read of the CPU package counter: (cumulative microjoules, ceiling)."""
    return find_cpu_reader(root).read()
