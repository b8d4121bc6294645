"""joulemetre: a workload-wrapping energy profiler and analysis toolkit.

Wrap a training or inference command, sample per-component power while it
runs, subtract the machine's idle baseline, and attribute the remaining
joules to epochs. The analysis layer turns collections of profiled runs
into correlations, complexity-based energy models, batch-sweep curves, and
lifecycle estimates.
"""

from .analysis import (
    CorrelationResult,
    EnergyModel,
    LifecycleEstimate,
    PhaseSplit,
    RunSummary,
    SweepPoint,
    SweepSummary,
    batch_sweep_summary,
    carbon_estimate,
    correlate_by_group,
    correlate_metric_vs_energy,
    fit_energy_model,
    lifecycle_estimate,
    pearson,
    spearman,
)
from .energy import (
    EnergyReport,
    ExtrapolationModel,
    IdleBaseline,
    aggregate_power,
    attribute_epochs,
    build_report,
    fit_extrapolation,
    idle_adjusted_energy,
    integrate_energy,
    measure_idle,
    predict_total,
)
from .errors import JoulemetreError
from .markers import MARKER_PIPE_ENV, MarkerEvent, MarkerKind
from .models import (
    LayerKind,
    LayerSpec,
    ModelManifest,
    count_macs,
    count_params,
    load_manifest,
    macs_per_param,
    validate_manifest,
)
from .profiler import MANIFEST_OUT_ENV, Profiler
from .runstore import RunConfig, RunRecord, RunStore
from .telemetry import (
    Channel,
    DimmSpec,
    HardwareConfig,
    PowerSample,
    dram_power,
    tdp_linear_estimate,
)
from .trace import PowerTrace, UtilTrace

__version__ = "0.1.0"

__all__ = [
    "MANIFEST_OUT_ENV",
    "MARKER_PIPE_ENV",
    "Channel",
    "CorrelationResult",
    "DimmSpec",
    "EnergyModel",
    "EnergyReport",
    "ExtrapolationModel",
    "HardwareConfig",
    "IdleBaseline",
    "JoulemetreError",
    "LayerKind",
    "LayerSpec",
    "LifecycleEstimate",
    "MarkerEvent",
    "MarkerKind",
    "ModelManifest",
    "PhaseSplit",
    "PowerSample",
    "PowerTrace",
    "Profiler",
    "RunConfig",
    "RunRecord",
    "RunStore",
    "RunSummary",
    "SweepPoint",
    "SweepSummary",
    "UtilTrace",
    "aggregate_power",
    "attribute_epochs",
    "batch_sweep_summary",
    "build_report",
    "carbon_estimate",
    "correlate_by_group",
    "correlate_metric_vs_energy",
    "count_macs",
    "count_params",
    "dram_power",
    "fit_energy_model",
    "fit_extrapolation",
    "idle_adjusted_energy",
    "integrate_energy",
    "lifecycle_estimate",
    "load_manifest",
    "macs_per_param",
    "measure_idle",
    "pearson",
    "predict_total",
    "spearman",
    "tdp_linear_estimate",
    "validate_manifest",
    "__version__",
]
