"""Power and utilisation acquisition: hardware counters, analytic models, replay."""

from .estimators import dram_power, tdp_linear_estimate
from .nvml import NvmlGpu, read_gpu_power
from .powercap import (
    POWERCAP_ROOT_ENV,
    CounterReading,
    PowercapReader,
    find_cpu_reader,
    find_dram_reader,
    powercap_root,
    read_cpu_energy_register,
    wraparound_delta,
)
from .sampler import (
    CounterPowerSource,
    InstantPowerSource,
    PowerSampler,
    SamplerDiagnostics,
    SamplerResult,
    UtilSource,
    replay_sampler,
    run_sampler,
)
from .samples import (
    CHANNEL_ORDER,
    DEFAULT_DELTA_T,
    Channel,
    DimmSpec,
    HardwareConfig,
    PowerSample,
    UtilChannel,
    UtilSample,
)

__all__ = [
    "CHANNEL_ORDER",
    "DEFAULT_DELTA_T",
    "POWERCAP_ROOT_ENV",
    "Channel",
    "CounterPowerSource",
    "CounterReading",
    "DimmSpec",
    "HardwareConfig",
    "InstantPowerSource",
    "NvmlGpu",
    "PowerSample",
    "PowerSampler",
    "PowercapReader",
    "SamplerDiagnostics",
    "SamplerResult",
    "UtilChannel",
    "UtilSample",
    "UtilSource",
    "dram_power",
    "find_cpu_reader",
    "find_dram_reader",
    "powercap_root",
    "read_cpu_energy_register",
    "read_gpu_power",
    "replay_sampler",
    "run_sampler",
    "tdp_linear_estimate",
    "wraparound_delta",
]
