"""Receding-horizon simulation: measure, forecast, solve, dispatch, integrate."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .admm import from_mpc_instance, run_admm
from .degradation import (BatteryFadeParams, GenAgingParams, battery_capacity_loss,
                          generator_aging, mean_c_rate)
from .forecast import LoadProfileSpec, NoiseSpec, WindowForecaster, load_at
from .model import (PCM_RATING, PGM_RATING, BatterySpec, ConfigError, DeviceRating, EmsConfig,
                    PlantState)
from .plant import RAMP_SLACK, LagParams, plant_step
from .qpform import (InfeasibleTerminalSoC, MpcInstance, build_qp, reachable_soc_window,
                     shift_active_set, terminal_target, tracking_target)
from .qpsolve import QpStatus, solve

SOLVERS = ("centralized", "admm")
AUDIT_REL = 1e-6  # command audit tolerance, relative to the device rating


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run depends on."""

    cfg: EmsConfig = EmsConfig()
    gen: DeviceRating = PGM_RATING
    ess: DeviceRating = PCM_RATING
    batt: BatterySpec = BatterySpec()
    load: LoadProfileSpec = LoadProfileSpec(baseline=10e6)
    noise: NoiseSpec = NoiseSpec()
    fade: BatteryFadeParams = BatteryFadeParams()
    aging: GenAgingParams = GenAgingParams()
    lag: LagParams = LagParams()
    initial_p_g: float = 0.0
    initial_p_b: float = 0.0

    def errors(self):
        out = list(self.cfg.errors())
        out += self.gen.errors("pgm", generator=True)
        out += self.ess.errors("pcm")
        out += self.batt.errors()
        if isinstance(self.load, LoadProfileSpec):
            out += self.load.errors()
        out += self.noise.errors() + self.fade.errors() + self.aging.errors() + self.lag.errors()
        return out

    def validate(self):
        errs = self.errors()
        if errs:
            raise ConfigError(errs)
        return self

    def load_fn(self):
        if isinstance(self.load, LoadProfileSpec):
            spec = self.load
            return lambda t: load_at(spec, t)
        return self.load


@dataclass
class RunResult:
    t: np.ndarray
    p_g: np.ndarray
    p_b: np.ndarray
    load: np.ndarray
    forecast: np.ndarray
    soc: np.ndarray
    mismatch: np.ndarray
    status: list
    solve_time: np.ndarray
    ah_throughput: np.ndarray  # cumulative Ah at each period start
    gen_life: np.ndarray  # cumulative life fraction at each period start
    capacity_loss: float  # percent, at the end of the run
    gen_life_consumed: float  # fraction, at the end of the run
    c_rate: float
    violations: int  # dispatched commands outside box or ramp
    plant_violations: int  # plant steps breaking the ramp or box invariant
    failures: int
    soc_clamp_events: int
    final_state: PlantState = field(repr=False, default=None)

    @property
    def steps(self) -> int:
        return len(self.t)

    def summary(self) -> dict:
        return {
            "capacity_loss_pct": self.capacity_loss,
            "gen_life_consumed": self.gen_life_consumed,
            "c_rate_per_h": self.c_rate,
            "ah_throughput": float(self.final_state.ah_throughput),
            "final_soc": float(self.final_state.soc),
            "violations": self.violations,
            "plant_violations": self.plant_violations,
            "failures": self.failures,
            "soc_clamp_events": self.soc_clamp_events,
            "steps": self.steps,
        }


def command_bounds(p_m: float, rating: DeviceRating, step_time: float):
    """Interval a first-step command must lie in given the measured power."""
    p = rating.clamp(p_m)
    r = rating.step_ramp(step_time)
    return max(rating.lower_limit, p - r), min(rating.upper_limit, p + r)


def audit_command(cmd: float, p_m: float, rating: DeviceRating, step_time: float):
    """Return ``(violated, dispatched)``: the audit verdict and the command clipped to its bounds."""
    lo, hi = command_bounds(p_m, rating, step_time)
    tol = AUDIT_REL * rating.rated_power
    violated = not (lo - tol <= cmd <= hi + tol)
    return violated, min(max(cmd, lo), hi)


def _plant_ok(old: float, new: float, rating: DeviceRating, dt: float) -> bool:
    if abs(new - old) > rating.ramp_rate * dt + RAMP_SLACK:
        return False
    inside_before = rating.lower_limit <= old <= rating.upper_limit
    inside_after = rating.lower_limit - RAMP_SLACK <= new <= rating.upper_limit + RAMP_SLACK
    # a device that starts outside its box only has to move toward it
    return inside_after or (not inside_before and abs(new - rating.clamp(new)) < abs(old - rating.clamp(old)))


def _terminal_soc(sc: Scenario, fc, state: PlantState, level: float) -> float:
    """This solve's terminal SoC under the configured policy."""
    cfg, ess, batt = sc.cfg, sc.ess, sc.batt
    h, ts = cfg.horizon, cfg.step_time
    window = reachable_soc_window(state.soc, state.p_b, ess, batt, h, ts)
    if cfg.soc_policy == "tracking":
        return tracking_target(state.soc, cfg.target_soc, cfg.soc_gain, fc, state.p_g, sc.gen, ess,
                               batt, ts, window, level, cfg.gen_push)
    max_step = h * ts * max(abs(ess.lower_limit), abs(ess.upper_limit)) / batt.energy_per_soc
    return terminal_target(state.soc, cfg.target_soc, max_step, cfg.soc_gain, window)


def initial_instance(scenario: Scenario, seed: int | None = None) -> MpcInstance:
    """The MPC instance the controller solves in its first period."""
    sc = scenario.validate()
    cfg = sc.cfg
    fc = WindowForecaster(sc.load_fn(), sc.noise, seed).window(cfg.step_time, cfg.horizon,
                                                                cfg.step_time)
    state = PlantState(sc.initial_p_g, sc.initial_p_b, sc.batt.initial_soc)
    qh = _terminal_soc(sc, fc, state, float(fc.mean()))
    return MpcInstance.single(fc, sc.gen, sc.ess, sc.batt, state.p_g, state.p_b, state.soc, qh,
                              cfg.step_time, cfg.cost_weight)


class _Centralized:
    """QP solves warm-started from the previous optimal active set, shifted one step."""

    def __init__(self):
        self.warm = None

    def __call__(self, inst: MpcInstance, cfg: EmsConfig):
        warm = None
        if self.warm is not None:
            warm = shift_active_set(self.warm, inst.horizon, len(inst.devices))
        sol = solve(build_qp(inst), warm_start=warm)
        if sol.status is QpStatus.OPTIMAL:
            self.warm = sol.active_set
            h = inst.horizon
            return sol.status, sol.x[0], sol.x[h]
        self.warm = None
        return sol.status, None, None


class _Distributed:
    def __init__(self):
        self.prev = None

    def __call__(self, inst: MpcInstance, cfg: EmsConfig):
        problem = from_mpc_instance(inst)
        x0 = None
        if self.prev is not None:
            # shifted previous plan as the starting iterate
            x0 = [np.concatenate([p[1:], p[-1:]]) for p in self.prev]
        res = run_admm(problem, cfg.admm_rho, cfg.admm_tol, cfg.admm_max_iter, x0=x0)
        if not res.converged:
            self.prev = None
            return QpStatus.MAX_ITER, None, None
        self.prev = res.x
        return QpStatus.OPTIMAL, res.x[0][0], res.x[1][0]


def run_closed_loop(scenario: Scenario, solver_kind: str = "centralized", seed: int | None = None,
                    total_time: float | None = None) -> RunResult:
    """Simulate ``total_time`` seconds (default ``cfg.total_time``) of receding-horizon control.

    Every EMS period the controller reads the plant, asks for a noisy
    forecast of the next horizon, picks this solve's terminal SoC, solves and
    sends the first-step commands, which the plant holds for the period.
    """
    if solver_kind not in SOLVERS:
        raise ValueError(f"unknown solver {solver_kind!r}; expected one of {SOLVERS}")
    scenario.validate()
    sc = scenario
    cfg, gen, ess, batt = sc.cfg, sc.gen, sc.ess, sc.batt
    h, ts = cfg.horizon, cfg.step_time
    total = cfg.total_time if total_time is None else total_time
    periods = int(round(total / cfg.ems_period))
    sub = cfg.substeps
    dt = cfg.ems_period / sub
    load_fn = sc.load_fn()
    forecaster = WindowForecaster(load_fn, sc.noise, seed)
    solver = _Centralized() if solver_kind == "centralized" else _Distributed()
    rated_g = gen.rated_power
    accel = cfg.accel_factor

    state = PlantState(sc.initial_p_g, sc.initial_p_b, batt.initial_soc, 0.0, 0.0, 0.0, 0)
    # actual load on the plant grid, sampled at the end of each plant step
    plant_load = np.asarray(load_fn((np.arange(periods * sub) + 1) * dt), dtype=float).tolist()
    period_load = np.asarray(load_fn(np.arange(periods) * cfg.ems_period), dtype=float)

    cols = {k: np.empty(periods) for k in
            ("t", "p_g", "p_b", "load", "forecast", "soc", "mismatch", "solve_time", "ah", "life")}
    status = []
    cmd_g, cmd_b = state.p_g, state.p_b
    violations = plant_violations = failures = 0
    mismatch = float(state.p_g + state.p_b - period_load[0]) if periods else 0.0
    life = 0.0
    level = None  # smoothed forecast level for the tracking policy
    smooth = 1.0 - math.exp(-cfg.ems_period / cfg.load_filter) if cfg.load_filter > 0 else 1.0
    for k in range(periods):
        t = k * cfg.ems_period
        fc = forecaster.window(t + ts, h, ts)
        q0 = state.soc
        level = float(fc.mean()) if level is None else level + smooth * (float(fc.mean()) - level)
        qh = _terminal_soc(sc, fc, state, level)
        tic = time.perf_counter()
        try:
            inst = MpcInstance.single(fc, gen, ess, batt, state.p_g, state.p_b, q0, qh, ts,
                                      cfg.cost_weight)
            st, g1, b1 = solver(inst, cfg)
        except InfeasibleTerminalSoC:
            st, g1, b1 = QpStatus.INFEASIBLE, None, None
        elapsed = time.perf_counter() - tic
        if st is QpStatus.OPTIMAL:
            bad_g, cmd_g = audit_command(g1, state.p_g, gen, ts)
            bad_b, cmd_b = audit_command(b1, state.p_b, ess, ts)
            violations += bad_g + bad_b
        else:
            failures += 1  # hold the previous command

        for name, v in (("t", t), ("p_g", state.p_g), ("p_b", state.p_b), ("load", period_load[k]),
                        ("forecast", fc[0]), ("soc", q0), ("mismatch", mismatch),
                        ("solve_time", elapsed), ("ah", state.ah_throughput), ("life", life)):
            cols[name][k] = v
        status.append(st.value)

        for i in range(sub):
            old = state
            state, mismatch = plant_step(old, cmd_g, cmd_b, plant_load[k * sub + i], dt, gen, ess,
                                         batt, sc.lag)
            if not (_plant_ok(old.p_g, state.p_g, gen, dt) and _plant_ok(old.p_b, state.p_b, ess, dt)):
                plant_violations += 1
            sop = min(max(0.5 * (old.p_g + state.p_g) / rated_g, 0.0), 1.0)
            life += generator_aging(sop, dt, sc.aging, accel)
        state = PlantState(state.p_g, state.p_b, state.soc, state.ah_throughput, life, state.t,
                           state.soc_clamp_events)

    c_rate = mean_c_rate(state.ah_throughput, total, batt.capacity_total)
    loss = battery_capacity_loss(accel * state.ah_throughput, c_rate, sc.fade)
    return RunResult(cols["t"], cols["p_g"], cols["p_b"], cols["load"], cols["forecast"],
                     cols["soc"], cols["mismatch"], status, cols["solve_time"], cols["ah"],
                     cols["life"], loss, life, c_rate, violations, plant_violations, failures,
                     state.soc_clamp_events, state)


def capacity_loss_series(result: RunResult, scenario: Scenario) -> np.ndarray:
    """Capacity loss (percent) as it would read at each period start."""
    cfg, batt = scenario.cfg, scenario.batt
    out = np.zeros(result.steps)
    for i, (t, ah) in enumerate(zip(result.t, result.ah_throughput)):
        if t > 0 and ah > 0:
            out[i] = battery_capacity_loss(cfg.accel_factor * ah,
                                           mean_c_rate(ah, t, batt.capacity_total), scenario.fade)
    return out
