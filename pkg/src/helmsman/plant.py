"""Low-bandwidth plant: generator and storage power dynamics plus battery SoC.

Each device follows its command through a first-order lag whose output rate
is saturated at the device ramp rate and whose output is kept in its box.
The lag is integrated exactly (``exp(-dt/tau)``), so any ``dt`` is stable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .model import BatterySpec, DeviceRating, PlantState

log = logging.getLogger(__name__)

RAMP_SLACK = 1e-9  # W, allowed rounding in the ramp invariant


@dataclass(frozen=True)
class LagParams:
    # Both constants sit well below the 1 ms EMS period so a ramp-limited
    # command is reached within the period it was issued for.
    tau_g: float = 2e-4  # s
    tau_b: float = 2e-5  # s

    def errors(self):
        out = []
        for key in ("tau_g", "tau_b"):
            if not getattr(self, key) >= 0:
                out.append(("InvalidValue", f"system.{key}", f"{key} must be >= 0"))
        return out


def device_step(p: float, cmd: float, rating: DeviceRating, tau: float, dt: float) -> float:
    """Advance one device by ``dt``.

    A device that starts outside its box (e.g. a generator at rest below its
    minimum load) moves toward the box at full ramp and never violates the
    ramp limit to get there.
    """
    nxt = cmd if tau <= 0 else cmd + (p - cmd) * math.exp(-dt / tau)
    step = rating.ramp_rate * dt
    lo = max(rating.lower_limit, p - step)
    hi = min(rating.upper_limit, p + step)
    if lo > hi:
        q = p + step if p < rating.lower_limit else p - step
    else:
        q = min(max(nxt, lo), hi)
    # p +- step can round an ulp past the ramp at MW magnitudes
    while q - p > step:
        q = math.nextafter(q, -math.inf)
    while p - q > step:
        q = math.nextafter(q, math.inf)
    return q


def _abs_integral(a: float, b: float, dt: float) -> float:
    """Exact integral of ``|p|`` over ``dt`` for ``p`` linear from ``a`` to ``b``."""
    if a * b >= 0:
        return 0.5 * (abs(a) + abs(b)) * dt
    return 0.5 * (a * a + b * b) / (abs(a) + abs(b)) * dt


def plant_step(state: PlantState, cmd_g: float, cmd_b: float, load: float, dt: float,
               gen: DeviceRating, ess: DeviceRating, batt: BatterySpec,
               lag: LagParams = LagParams()):
    """Advance the plant by ``dt``; returns ``(new_state, bus_mismatch)``.

    SoC and Ah-throughput integrate the storage power with the trapezoid rule
    (exact for the piecewise-linear power path). The mismatch
    ``p_g + p_b - load`` is taken at the end of the step.
    """
    p_g = device_step(state.p_g, cmd_g, gen, lag.tau_g, dt)
    p_b = device_step(state.p_b, cmd_b, ess, lag.tau_b, dt)
    energy = 0.5 * (state.p_b + p_b) * dt  # J delivered by the storage
    soc = state.soc - energy / batt.energy_per_soc
    clamps = state.soc_clamp_events
    if soc < 0.0 or soc > 1.0:
        log.warning("SoC %.6g clamped into [0, 1] at t=%.6g s", soc, state.t + dt)
        soc = min(max(soc, 0.0), 1.0)
        clamps += 1
    ah = state.ah_throughput + _abs_integral(state.p_b, p_b, dt) / batt.bus_voltage / 3600.0
    new = PlantState(p_g, p_b, soc, ah, state.gen_life_consumed, state.t + dt, clamps)
    return new, p_g + p_b - load
