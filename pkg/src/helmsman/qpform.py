"""Condensed QP for the receding-horizon power-split problem.

Decision vector ``x`` stacks each device's horizon profile, generators first::

    x = [p_g1[1..h], ..., p_gN[1..h], p_b1[1..h], ..., p_bM[1..h]]

The objective is ``sum_k (sum_d p_d,k - p_l,k^f)^2 + gamma*C(x) + eps/2 |x|^2``.
Per-step ramp limits are ``ramp_rate * step_time``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import BatterySpec, DeviceRating, QuadraticCost
from .qpsolve import QpProblem

TIKHONOV_REL = 1e-8


class InfeasibleTerminalSoC(ValueError):
    """The terminal SoC equality asks for more energy than the boxes allow."""


def rate_matrix(h: int) -> np.ndarray:
    """First-difference matrix: ``(D p)_k = p_k - p_{k-1}`` with ``p_0`` folded out."""
    return np.eye(h) - np.eye(h, k=-1)


def soc_energy_rhs(batt: BatterySpec, q0: float, qh: float, step_time: float) -> float:
    """Required ``sum_k p_b,k`` (W) to move the SoC from ``q0`` to ``qh`` over the horizon."""
    return 3600.0 * batt.capacity_total * batt.bus_voltage / step_time * (q0 - qh)


@dataclass(frozen=True)
class MpcInstance:
    forecast: np.ndarray
    gens: tuple
    esss: tuple
    batteries: tuple
    gen_measured: tuple
    ess_measured: tuple
    soc_now: tuple
    soc_target: tuple
    step_time: float
    cost_weight: float = 0.0
    gen_costs: tuple | None = None
    ess_costs: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "forecast", np.asarray(self.forecast, dtype=float).reshape(-1))
        if len(self.esss) != len(self.batteries):
            raise ValueError("one BatterySpec per ESS is required")
        if len(self.gen_measured) != len(self.gens) or len(self.ess_measured) != len(self.esss):
            raise ValueError("one measured power per device is required")
        for q in (*self.soc_now, *self.soc_target):
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"SoC {q} outside [0, 1]")
        if self.horizon < 1 or not np.all(np.isfinite(self.forecast)):
            raise ValueError("forecast must be a finite, non-empty profile")

    @classmethod
    def single(cls, forecast, gen: DeviceRating, ess: DeviceRating, batt: BatterySpec,
               p_g_m: float, p_b_m: float, q0: float, qh: float, step_time: float,
               cost_weight: float = 0.0, gen_cost: QuadraticCost | None = None,
               ess_cost: QuadraticCost | None = None):
        return cls(forecast, (gen,), (ess,), (batt,), (p_g_m,), (p_b_m,), (q0,), (qh,),
                   step_time, cost_weight,
                   None if gen_cost is None else (gen_cost,),
                   None if ess_cost is None else (ess_cost,))

    @property
    def horizon(self) -> int:
        return self.forecast.shape[0]

    @property
    def devices(self) -> tuple:
        return tuple(self.gens) + tuple(self.esss)

    def costs(self) -> tuple:
        gc = self.gen_costs or (QuadraticCost(),) * len(self.gens)
        ec = self.ess_costs or (QuadraticCost(),) * len(self.esss)
        return tuple(gc) + tuple(ec)

    def measured(self) -> tuple:
        """Measured powers clamped into each device's box."""
        raw = tuple(self.gen_measured) + tuple(self.ess_measured)
        return tuple(d.clamp(p) for d, p in zip(self.devices, raw))

    def block(self, device_index: int) -> slice:
        h = self.horizon
        return slice(device_index * h, (device_index + 1) * h)


@lru_cache(maxsize=64)
def _structure(h, devices, costs, gamma, step_time):
    nd = len(devices)
    n = nd * h
    S = np.tile(np.eye(h), (1, nd))  # per-step supply selector
    H = 2.0 * S.T @ S
    f_cost = np.zeros(n)
    for i, c in enumerate(costs):
        sl = slice(i * h, (i + 1) * h)
        H[sl, sl] += 2.0 * gamma * c.c2 * np.eye(h)
        f_cost[sl] = gamma * c.c1
    eps = TIKHONOV_REL * np.abs(H).max()
    H = H + eps * np.eye(n)

    D = rate_matrix(h)
    A = np.zeros((2 * h * nd, n))
    b0 = np.zeros(2 * h * nd)
    lb = np.zeros(n)
    ub = np.zeros(n)
    for i, dev in enumerate(devices):
        sl = slice(i * h, (i + 1) * h)
        rows = slice(2 * h * i, 2 * h * (i + 1))
        A[rows, sl] = np.vstack([D, -D])
        b0[rows] = dev.step_ramp(step_time)
        lb[sl] = dev.lower_limit
        ub[sl] = dev.upper_limit
    for arr in (H, S, f_cost, A, b0, lb, ub):
        arr.setflags(write=False)
    return H, S, f_cost, A, b0, lb, ub, eps


@lru_cache(maxsize=64)
def _energy_rows(h, n_g, n_b):
    A_eq = np.zeros((n_b, (n_g + n_b) * h))
    for j in range(n_b):
        A_eq[j, (n_g + j) * h:(n_g + j + 1) * h] = 1.0
    A_eq.setflags(write=False)
    return A_eq


def build_qp(inst: MpcInstance) -> QpProblem:
    """Condensed QP whose minimiser is the optimal horizon power split."""
    h = inst.horizon
    devices = inst.devices
    n_g = len(inst.gens)
    H, S, f_cost, A, b0, lb, ub, _ = _structure(h, devices, inst.costs(), float(inst.cost_weight),
                                                float(inst.step_time))
    l = inst.forecast
    f = np.tile(-2.0 * l, len(devices)) + f_cost  # equals -2 S'l
    b = b0.copy()
    for i, pm in enumerate(inst.measured()):
        b[2 * h * i] += pm
        b[2 * h * i + h] -= pm
    A_eq = _energy_rows(h, n_g, len(inst.esss))
    b_eq = np.zeros(len(inst.esss))
    for j, (dev, batt, q0, qh) in enumerate(zip(inst.esss, inst.batteries, inst.soc_now, inst.soc_target)):
        b_eq[j] = soc_energy_rhs(batt, q0, qh, inst.step_time)
        reach = h * max(abs(dev.lower_limit), abs(dev.upper_limit))
        if abs(b_eq[j]) > reach:
            raise InfeasibleTerminalSoC(
                f"ESS {j}: horizon energy {b_eq[j]:.6g} W*steps exceeds box reach {reach:.6g}")
    return QpProblem(H, f, A_eq, b_eq, A, b, lb, ub, constant=float(l @ l))


def direct_objective(inst: MpcInstance, x) -> float:
    """Objective of the MPC problem evaluated term by term (reference for ``build_qp``)."""
    x = np.asarray(x, dtype=float)
    h = inst.horizon
    nd = len(inst.devices)
    P = x.reshape(nd, h)
    track = float(np.sum((P.sum(axis=0) - inst.forecast) ** 2))
    cost = sum(c(P[i]) for i, c in enumerate(inst.costs()))
    _, _, _, _, _, _, _, eps = _structure(h, inst.devices, inst.costs(), float(inst.cost_weight),
                                          float(inst.step_time))
    return track + inst.cost_weight * cost + 0.5 * eps * float(x @ x)


def soc_step_limit(horizon: int, step_time: float, power: float, batt: BatterySpec) -> float:
    """Largest SoC change one horizon can deliver at constant ``power``."""
    return horizon * step_time * abs(power) / batt.energy_per_soc


def reachable_soc_window(q0: float, p_m: float, rating: DeviceRating, batt: BatterySpec,
                         horizon: int, step_time: float, margin: float = 1e-6):
    """Terminal SoC interval reachable from measured power ``p_m`` under ramp and box limits.

    The interval is shrunk by ``margin`` of its width so the equality never
    sits exactly on a vertex of the feasible set.
    """
    p = rating.clamp(p_m)
    k = np.arange(1, horizon + 1)
    r = rating.step_ramp(step_time)
    e_max = float(np.sum(np.minimum(rating.upper_limit, p + k * r)))
    e_min = float(np.sum(np.maximum(rating.lower_limit, p - k * r)))
    pad = margin * (e_max - e_min)
    to_soc = step_time / batt.energy_per_soc
    return q0 - (e_max - pad) * to_soc, q0 - (e_min + pad) * to_soc


def terminal_target(q0: float, q_global: float, max_step, gain: float = 1.0, window=None) -> float:
    """Per-solve terminal SoC that walks toward ``q_global``.

    ``max_step`` caps the SoC change requested per solve; ``gain`` requests
    that fraction of the remaining error (1.0 requests all of it). The result
    is clipped into ``window`` (a reachable ``(low, high)`` interval) if given.
    """
    err = q0 - q_global
    step = min(gain * abs(err), max_step)
    qh = q0 - np.sign(err) * step
    if window is not None:
        lo, hi = window
        qh = min(max(qh, lo), hi)
    return float(min(max(qh, 0.0), 1.0))


def tracking_target(q0: float, q_global: float, gain: float, forecast, p_g_m: float,
                    gen: DeviceRating, ess: DeviceRating, batt: BatterySpec, step_time: float,
                    window=None, level=None, push: float = 0.0) -> float:
    """Per-solve terminal SoC that lets the storage cover what the generator cannot.

    The storage plan is ``gain`` of the remaining SoC error per horizon,
    clipped to the storage box. The generator reference heads for the load
    minus that plan, moving at most ``push`` plus its ramp reach away from
    ``p_g_m``; the storage energy covers the load above that reference. The
    load is the forecast window, shifted so its mean equals ``level`` when a
    smoothed level is given.
    """
    fc = np.asarray(forecast, dtype=float)
    h = fc.shape[0]
    if level is not None:
        fc = fc - fc.mean() + level
    plan = gain * (q0 - q_global) * batt.energy_per_soc / (h * step_time)
    plan = min(max(plan, ess.lower_limit), ess.upper_limit)
    reach = push + np.arange(1, h + 1) * gen.step_ramp(step_time)
    p = gen.clamp(p_g_m)
    g_ref = np.clip(fc - plan, p - reach, p + reach)
    g_ref = np.clip(g_ref, gen.lower_limit, gen.upper_limit)
    qh = q0 - float((fc - g_ref).sum()) * step_time / batt.energy_per_soc
    if window is not None:
        lo, hi = window
        qh = min(max(qh, lo), hi)
    return float(min(max(qh, 0.0), 1.0))


def shift_active_set(active, horizon: int, n_devices: int) -> tuple:
    """Move an active set of :func:`build_qp` one step forward in time.

    Constraints on step ``k`` of the previous solve become constraints on
    step ``k-1``; those on the first step are dropped and the last step
    repeats its predecessor. Ids follow the solver's numbering: ramp rows,
    then upper bounds, then lower bounds.
    """
    h = horizon
    m_ramp = 2 * h * n_devices
    out = []
    for i in active:
        if i < m_ramp:
            block, k = divmod(i, h)
            base = block * h
        else:
            block, k = divmod(i - m_ramp, h)
            base = m_ramp + block * h
        if k >= 1:
            out.append(base + k - 1)
        if k == h - 1:
            out.append(base + k)
    return tuple(dict.fromkeys(out))
