"""Domain types for power and utilisation telemetry."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

from ..errors import OutOfRange


class Channel(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    DRAM = "DRAM"


class UtilChannel(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    GPU_VRAM = "GPU_VRAM"
    DRAM = "DRAM"


# Stable ordering used whenever channels are summed or serialised, so that
# floating-point totals are reproducible across runs.
CHANNEL_ORDER = (Channel.CPU, Channel.GPU, Channel.DRAM)


@dataclass(frozen=True)
class PowerSample:
    """One per-channel power reading at a monotonic timestamp."""

    t_ns: int
    channel: Channel
    watts: float

    def __post_init__(self):
        if self.watts < 0:
            raise OutOfRange(f"power must be non-negative, got {self.watts}")


@dataclass(frozen=True)
class UtilSample:
    """One per-channel utilisation reading, as a fraction in [0, 1]."""

    t_ns: int
    channel: UtilChannel
    util: float

    def __post_init__(self):
        if not 0.0 <= self.util <= 1.0:
            raise OutOfRange(f"utilisation must be in [0,1], got {self.util}")


@dataclass(frozen=True)
class DimmSpec:
    """Electrical description of the installed DRAM, for the analytic power model.

    The per-DIMM capacitance is board-specific and rarely published; the
    default of 2.2e-10 F is a placeholder that should be calibrated against a
    wall meter if absolute DRAM numbers matter.
    """

    n_dimm: int = 0
    capacitance: float = 2.2e-10
    voltage: float = 1.2
    frequency: float = 1.6e9

    def __post_init__(self):
        if self.n_dimm < 0:
            raise OutOfRange("n_dimm must be >= 0")
        for name in ("capacitance", "voltage", "frequency"):
            if getattr(self, name) <= 0:
                raise OutOfRange(f"{name} must be > 0")


#: Default sampling interval in seconds. Fine enough to resolve epoch
#: boundaries on desk-scale runs while keeping reader overhead negligible.
DEFAULT_DELTA_T = 0.1


@dataclass(frozen=True)
class HardwareConfig:
    """Static description of the machine under measurement."""

    cpu_tdp: float = 65.0
    gpu_tdp: float = 320.0
    dimm: DimmSpec = field(default_factory=DimmSpec)
    sampling_interval: float = DEFAULT_DELTA_T

    def __post_init__(self):
        if self.cpu_tdp <= 0 or self.gpu_tdp <= 0:
            raise OutOfRange("TDP values must be > 0")
        if self.sampling_interval <= 0:
            raise OutOfRange("sampling_interval must be > 0")

    def to_dict(self) -> dict:
        return {
            "cpu_tdp": self.cpu_tdp,
            "gpu_tdp": self.gpu_tdp,
            "dimm": {
                "n_dimm": self.dimm.n_dimm,
                "capacitance": self.dimm.capacitance,
                "voltage": self.dimm.voltage,
                "frequency": self.dimm.frequency,
            },
            "sampling_interval": self.sampling_interval,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareConfig":
        dimm = DimmSpec(**d.get("dimm", {}))
        return cls(
            cpu_tdp=d.get("cpu_tdp", 65.0),
            gpu_tdp=d.get("gpu_tdp", 320.0),
            dimm=dimm,
            sampling_interval=d.get("sampling_interval", DEFAULT_DELTA_T),
        )

    def config_hash(self) -> str:
        """Stable hash identifying this hardware setup, used to key idle baselines."""
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]
