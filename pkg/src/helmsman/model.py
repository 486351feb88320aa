"""Shared domain types for the shipboard energy-management toolkit.

All quantities are SI internally: W, W/s, s, Ah, V. Configuration files are
converted on load (see :mod:`helmsman.config`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MW = 1e6
SOC_POLICIES = ("rate_limited", "tracking")


class ConfigError(ValueError):
    """One or more configuration invariants failed.

    ``errors`` holds ``(kind, key, message)`` triples where ``kind`` is one of
    ``InvalidRating``, ``InvalidHorizon``, ``InvalidSoC`` or ``InvalidValue``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{kind}: {key}: {msg}" for kind, key, msg in self.errors]
        super().__init__("; ".join(lines) if lines else "invalid configuration")

    @property
    def kinds(self):
        return {kind for kind, _, _ in self.errors}


@dataclass(frozen=True)
class DeviceRating:
    """Power rating of one device (a Table I row)."""

    rated_power: float  # W
    ramp_rate: float  # W/s
    lower_limit: float  # W
    upper_limit: float  # W

    def errors(self, name: str = "device", generator: bool = False):
        out = []
        if not self.lower_limit <= self.upper_limit:
            out.append(("InvalidRating", f"{name}.lower_limit",
                        f"lower_limit {self.lower_limit} exceeds upper_limit {self.upper_limit}"))
        if not self.ramp_rate > 0:
            out.append(("InvalidRating", f"{name}.ramp_rate", "ramp_rate must be positive"))
        if not self.upper_limit <= self.rated_power:
            out.append(("InvalidRating", f"{name}.upper_limit",
                        f"upper_limit {self.upper_limit} exceeds rated_power {self.rated_power}"))
        if generator and self.lower_limit < 0:
            out.append(("InvalidRating", f"{name}.lower_limit",
                        "generator lower_limit must be >= 0"))
        return out

    def step_ramp(self, step_time: float) -> float:
        """Largest power change allowed over one step of ``step_time`` seconds."""
        return self.ramp_rate * step_time

    def clamp(self, power: float) -> float:
        return min(max(power, self.lower_limit), self.upper_limit)


@dataclass(frozen=True)
class BatterySpec:
    capacity_total: float = 100.0  # Ah
    initial_charge: float = 80.0  # Ah
    bus_voltage: float = 12e3  # V

    @property
    def initial_soc(self) -> float:
        return self.initial_charge / self.capacity_total

    @property
    def energy_per_soc(self) -> float:
        """Joules moved by a unit change of state of charge."""
        return 3600.0 * self.capacity_total * self.bus_voltage

    def errors(self, name: str = "pcm"):
        out = []
        if not 0 < self.initial_charge <= self.capacity_total:
            out.append(("InvalidSoC", f"{name}.initial_charge",
                        "need 0 < initial_charge <= capacity_total"))
        if not self.bus_voltage > 0:
            out.append(("InvalidValue", f"{name}.bus_voltage", "bus_voltage must be positive"))
        return out


@dataclass(frozen=True)
class EmsConfig:
    horizon: int = 10
    step_time: float = 1e-3  # s, QP discretisation (equals the EMS period by default)
    cost_weight: float = 0.0
    target_soc: float = 0.77
    plant_dt: float = 1e-4
    ems_period: float = 1e-3
    accel_factor: float = 1e6
    total_time: float = 10.0
    # How each solve picks its terminal SoC: "rate_limited" walks toward the
    # target as fast as the storage rating allows; "tracking" plans a fraction
    # soc_gain of the remaining error and lets the storage cover generator
    # ramp shortfall on top (see qpform.tracking_target). The tracking policy
    # sizes the storage energy against a load level smoothed over
    # load_filter seconds, and lets the generator reference lead its ramp
    # reach by up to gen_push W.
    soc_policy: str = "rate_limited"
    soc_gain: float = 1.0
    load_filter: float = 0.05  # s
    gen_push: float = 0.3e6  # W
    admm_rho: float = 1.0
    admm_tol: float = 1e-6
    admm_max_iter: int = 5000

    def errors(self):
        out = []
        if not (isinstance(self.horizon, (int, np.integer)) and self.horizon >= 2):
            out.append(("InvalidHorizon", "ems.horizon", "horizon must be an integer >= 2"))
        if not self.step_time > 0:
            out.append(("InvalidHorizon", "ems.step_time", "step_time must be positive"))
        if not self.plant_dt > 0:
            out.append(("InvalidHorizon", "system.plant_dt", "plant_dt must be positive"))
        if not self.plant_dt <= self.ems_period:
            out.append(("InvalidHorizon", "system.plant_dt", "plant_dt must not exceed ems_period"))
        if not 0.0 <= self.target_soc <= 1.0:
            out.append(("InvalidSoC", "ems.target_soc", "target_soc must lie in [0, 1]"))
        if not self.cost_weight >= 0:
            out.append(("InvalidValue", "ems.cost_weight", "cost_weight must be >= 0"))
        if not self.accel_factor > 0:
            out.append(("InvalidValue", "degradation.accel_factor", "accel_factor must be positive"))
        if not self.total_time > 0:
            out.append(("InvalidValue", "system.total_time", "total_time must be positive"))
        if self.soc_policy not in SOC_POLICIES:
            out.append(("InvalidValue", "ems.soc_policy", f"soc_policy must be one of {SOC_POLICIES}"))
        if not 0 < self.soc_gain <= 1:
            out.append(("InvalidValue", "ems.soc_gain", "soc_gain must lie in (0, 1]"))
        if not self.load_filter >= 0:
            out.append(("InvalidValue", "ems.load_filter", "load_filter must be >= 0"))
        if not self.gen_push >= 0:
            out.append(("InvalidValue", "ems.gen_push", "gen_push must be >= 0"))
        if not self.admm_rho > 0:
            out.append(("InvalidValue", "ems.admm_rho", "admm_rho must be positive"))
        if not (self.admm_tol > 0 and self.admm_max_iter >= 1):
            out.append(("InvalidValue", "ems.admm_tol", "admm_tol and admm_max_iter must be positive"))
        if self.ems_period > 0 and self.plant_dt > 0:
            ratio = self.ems_period / self.plant_dt
            if abs(ratio - round(ratio)) > 1e-6 * ratio:
                out.append(("InvalidHorizon", "system.plant_dt",
                            "ems_period must be an integer multiple of plant_dt"))
        return out

    @property
    def substeps(self) -> int:
        return int(round(self.ems_period / self.plant_dt))

    @property
    def periods(self) -> int:
        return int(round(self.total_time / self.ems_period))


@dataclass(frozen=True)
class QuadraticCost:
    """Per-step device cost ``c2 * p**2 + c1 * p``."""

    c2: float = 0.0
    c1: float = 0.0

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return float(np.sum(self.c2 * p * p + self.c1 * p))


# Table I ratings.
PGM_RATING = DeviceRating(29 * MW, 2.9 * MW, 0.29 * MW, 27.5 * MW)
PCM_RATING = DeviceRating(30 * MW, 10 * MW, -10.64 * MW, 10.64 * MW)
LOAD_RATED_POWER = 30 * MW


def as_horizon_profile(values, horizon: int) -> np.ndarray:
    """Validate a per-step power vector over the horizon and return it as floats."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape[0] != horizon:
        raise ValueError(f"horizon profile has length {arr.shape[0]}, expected {horizon}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("horizon profile contains non-finite entries")
    return arr


def validate_config(cfg: EmsConfig, ratings: dict, batt: BatterySpec):
    """Check every invariant and return the inputs unchanged.

    ``ratings`` maps device names to :class:`DeviceRating`; names starting
    with ``pgm``/``gen`` are treated as generators. Raises :class:`ConfigError`
    listing each violated invariant.
    """
    errors = list(cfg.errors())
    for name, rating in ratings.items():
        errors += rating.errors(name, generator=name.startswith(("pgm", "gen")))
    errors += batt.errors()
    if errors:
        raise ConfigError(errors)
    return cfg, ratings, batt


@dataclass(frozen=True)
class PlantState:
    p_g: float = 0.0
    p_b: float = 0.0
    soc: float = 0.8
    ah_throughput: float = 0.0
    gen_life_consumed: float = 0.0
    t: float = 0.0
    soc_clamp_events: int = field(default=0, compare=False)
