"""Analytic power estimators: DRAM capacitive model and the TDP-linear fallback."""

from __future__ import annotations

from ..errors import OutOfRange
from .samples import DimmSpec


def dram_power(spec: DimmSpec) -> float:
    """Estimated DRAM power draw in watts: n_dimm x 1/2 C V^2 f.

    Operating voltage and frequency are effectively constant during DRAM
    operation, which is what makes this static estimate usable. The
    multiplication order keeps power-of-two scalings exact so that the
    quadratic-in-voltage and linear-in-DIMM-count identities hold bit-for-bit.
    """
    per_dimm = 0.5 * spec.capacitance * spec.voltage * spec.voltage * spec.frequency
    return spec.n_dimm * per_dimm


def tdp_linear_estimate(util: float, tdp: float) -> float:
    """Power estimate as utilisation x TDP.

    This over-simplifies real power behaviour (DVFS, core gating) and is kept
    only as a last-resort fallback when no energy counter is readable.
    """
    if not 0.0 <= util <= 1.0:
        raise OutOfRange(f"utilisation must be in [0,1], got {util}")
    if tdp <= 0:
        raise OutOfRange(f"tdp must be > 0, got {tdp}")
    return util * tdp
