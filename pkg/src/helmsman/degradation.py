"""Battery capacity fade and generator aging laws."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BatteryFadeParams:
    """Ah-throughput capacity-fade law ``B*exp((-Ea + eta*c)/(R*T))*ah**z`` (percent)."""

    pre_exponent: float = 31630.0
    activation: float = 31700.0  # J/mol
    c_rate_coeff: float = 370.3  # J/mol per C-rate
    gas_const: float = 8.314  # J/(mol K)
    temperature: float = 298.15  # K
    exponent: float = 0.55

    def errors(self):
        out = []
        for key in ("pre_exponent", "activation", "c_rate_coeff", "gas_const", "temperature"):
            if not getattr(self, key) > 0:
                out.append(("InvalidValue", f"degradation.{key}", f"{key} must be positive"))
        if not 0 < self.exponent <= 1:
            out.append(("InvalidValue", "degradation.exponent", "exponent must lie in (0, 1]"))
        return out


@dataclass(frozen=True)
class GenAgingParams:
    base_rate: float = 1e-9  # 1/s
    stress_coeff: float = 3.0

    def errors(self):
        if not self.base_rate > 0:
            return [("InvalidValue", "degradation.gen_base_rate", "gen_base_rate must be positive")]
        return []


def battery_capacity_loss(ah: float, c_rate: float, params: BatteryFadeParams = BatteryFadeParams()) -> float:
    """Capacity loss in percent after ``ah`` amp-hours at mean C-rate ``c_rate``."""
    if ah < 0:
        raise ValueError("Ah-throughput must be >= 0")
    if ah == 0:
        return 0.0
    p = params
    arrhenius = math.exp((-p.activation + p.c_rate_coeff * c_rate) / (p.gas_const * p.temperature))
    return p.pre_exponent * arrhenius * ah ** p.exponent


def generator_aging(sop: float, dt: float, params: GenAgingParams = GenAgingParams(),
                    accel_factor: float = 1.0) -> float:
    """Life fraction consumed over ``dt`` seconds at state of power ``sop``."""
    return params.base_rate * math.exp(params.stress_coeff * sop) * dt * accel_factor


def mean_c_rate(ah_throughput: float, duration: float, capacity: float) -> float:
    """Run-mean ``|i_b|/Q_T`` in 1/h from the total Ah moved over ``duration`` seconds."""
    if duration <= 0:
        return 0.0
    return ah_throughput / (duration / 3600.0) / capacity
