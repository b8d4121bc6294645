"""Thin wrapper around the Nvidia management library for board power and utilisation.

Only one hardware GPU backend is supported; everything else reaches the
sampler through the same query-function interface, which is also how tests
inject fakes. Reported board power carries roughly +/-5 W of variance in
absolute terms while staying consistent in relative comparisons, so treat
single readings accordingly.
"""

from __future__ import annotations

from ..errors import DeviceUnavailable

try:  # pragma: no cover - depends on host having the driver stack
    import pynvml
except ImportError:  # pragma: no cover
    pynvml = None


class NvmlGpu:
    """Handle to GPU index `index`, yielding watts and utilisation fractions."""

    def __init__(self, index: int = 0):
        if pynvml is None:
            raise DeviceUnavailable("pynvml is not installed")
        try:
            pynvml.nvmlInit()
            self._handle = pynvml.nvmlDeviceGetHandleByIndex(index)
        except Exception as exc:  # NVMLError hierarchy varies across versions
            raise DeviceUnavailable(f"GPU {index} not reachable: {exc}") from exc

    def power_watts(self) -> float:
        try:
            return pynvml.nvmlDeviceGetPowerUsage(self._handle) / 1000.0
        except Exception as exc:
            raise DeviceUnavailable(f"power query failed: {exc}") from exc

    def utilisation(self) -> float:
        try:
            return pynvml.nvmlDeviceGetUtilizationRates(self._handle).gpu / 100.0
        except Exception as exc:
            raise DeviceUnavailable(f"utilisation query failed: {exc}") from exc

    def vram_utilisation(self) -> float:
        try:
            mem = pynvml.nvmlDeviceGetMemoryInfo(self._handle)
            return mem.used / mem.total if mem.total else 0.0
        except Exception as exc:
            raise DeviceUnavailable(f"memory query failed: {exc}") from exc

    def shutdown(self):
        try:
            pynvml.nvmlShutdown()
        except Exception:
            pass


def read_gpu_power(index: int = 0) -> float:
    """One-shot instantaneous board power in watts.

    Raises DeviceUnavailable when no GPU is reachable; callers must then omit
    the GPU channel from the trace entirely rather than recording zeros.
    """
    gpu = NvmlGpu(index)
    try:
        return gpu.power_watts()
    finally:
        gpu.shutdown()
