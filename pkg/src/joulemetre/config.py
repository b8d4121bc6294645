"""TOML configuration with command-line overrides.

Precedence is flags > file > defaults. The full effective configuration is
hashed into every run record so a stored run can always be traced back to
the exact settings that produced it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .telemetry.samples import DEFAULT_DELTA_T, DimmSpec, HardwareConfig

DEFAULTS: dict = {
    "runs_dir": "runs",
    "delta_t": DEFAULT_DELTA_T,
    "source": "hardware",
    "batch_size": 128,  # the conventional default hyperparameter, echoed into records
    "idle": {
        "min_duration_s": 30.0,
        "duration_s": 60.0,
        "baseline_max_age_h": 24.0,
    },
    "hardware": {
        "cpu_tdp_w": 65.0,
        "gpu_tdp_w": 320.0,
        "n_dimm": 0,
        "dimm_capacitance_f": 2.2e-10,
        "dimm_voltage_v": 1.2,
        "dimm_frequency_hz": 1.6e9,
    },
    "analysis": {
        "carbon_intensity_g_per_kwh": 0.0,
        # Utilisation correlates with power only up to saturation; scatter
        # above this wattage is treated as the plateau regime in reports.
        "power_plateau_w": 300.0,
        "target_epochs": 10,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {where!r} must be a table")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the TOML file at `path` (when given)."""
    if path is None:
        return json.loads(json.dumps(DEFAULTS))  # deep copy
    try:
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    return _merge(DEFAULTS, data)


def apply_overrides(config: dict, **overrides) -> dict:
    """Overlay non-None flag values onto a loaded config."""
    out = json.loads(json.dumps(config))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in out or isinstance(out.get(key), dict):
            raise ConfigError(f"cannot override configuration key {key!r}")
        out[key] = value
    return out


def effective_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def hardware_from_config(config: dict) -> HardwareConfig:
    hw = config["hardware"]
    return HardwareConfig(
        cpu_tdp=hw["cpu_tdp_w"],
        gpu_tdp=hw["gpu_tdp_w"],
        dimm=DimmSpec(
            n_dimm=hw["n_dimm"],
            capacitance=hw["dimm_capacitance_f"],
            voltage=hw["dimm_voltage_v"],
            frequency=hw["dimm_frequency_hz"],
        ),
        sampling_interval=config["delta_t"],
    )
