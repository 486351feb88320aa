"""TOML configuration files.

Sections: ``[system] [pgm] [pcm] [load] [noise] [ems] [degradation] [sweep]``.
Power keys come in two spellings, ``*_mw`` (megawatts, for people) and
``*_w`` (watts); :func:`save_config` writes the SI spelling so a saved file
reads back bit-for-bit. Unknown keys are errors, never ignored.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

from .closed_loop import Scenario
from .degradation import BatteryFadeParams, GenAgingParams
from .forecast import LoadProfileSpec, NoiseSpec, Pulse, TabulatedLoad
from .model import MW, BatterySpec, ConfigError, DeviceRating, EmsConfig
from .plant import LagParams
from .sweep import SweepPlan, default_soc_targets

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SEED_ENV = "HELMSMAN_SEED"


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    sweep: SweepPlan = field(default_factory=SweepPlan)
    load_csv: str = ""  # set when the load came from a CSV file


class _Section:
    """Typed reader over one TOML table that remembers which keys were used."""

    def __init__(self, name, table, errors):
        self.name = name
        self.table = table if isinstance(table, dict) else {}
        self.errors = errors
        self.used = set()
        if not isinstance(table, dict):
            errors.append(("InvalidValue", name, "expected a table"))

    def _bad(self, key, msg):
        self.errors.append(("InvalidValue", f"{self.name}.{key}", msg))

    def number(self, key, default):
        self.used.add(key)
        if key not in self.table:
            return default
        v = self.table[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self._bad(key, f"expected a number, got {v!r}")
            return default
        if not math.isfinite(v):
            self._bad(key, "must be finite")
            return default
        return float(v)

    def integer(self, key, default):
        self.used.add(key)
        if key not in self.table:
            return default
        v = self.table[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self._bad(key, f"expected an integer, got {v!r}")
            return default
        return v

    def string(self, key, default):
        self.used.add(key)
        if key not in self.table:
            return default
        v = self.table[key]
        if not isinstance(v, str):
            self._bad(key, f"expected a string, got {v!r}")
            return default
        return v

    def power(self, stem, default, suffix=""):
        """``stem_w`` in W or ``stem_mw`` in MW (not both)."""
        w, mw = f"{stem}_w{suffix}", f"{stem}_mw{suffix}"
        if w in self.table and mw in self.table:
            self._bad(mw, f"give either {w} or {mw}, not both")
        if mw in self.table:
            self.used.add(w)
            return self.number(mw, default / MW) * MW
        self.used.add(mw)
        return self.number(w, default)

    def finish(self):
        for key in self.table:
            if key not in self.used:
                self.errors.append(("InvalidValue", f"{self.name}.{key}", "unknown key"))


def _rating(sec: _Section, base: DeviceRating) -> DeviceRating:
    return DeviceRating(sec.power("rated", base.rated_power), sec.power("ramp", base.ramp_rate, "_per_s"),
                        sec.power("lower", base.lower_limit), sec.power("upper", base.upper_limit))


def _pulses(sec: _Section, errors):
    sec.used.add("pulses")
    raw = sec.table.get("pulses", [])
    if not isinstance(raw, list):
        errors.append(("InvalidValue", "load.pulses", "expected an array of tables"))
        return ()
    out = []
    for i, item in enumerate(raw):
        p = _Section(f"load.pulses[{i}]", item, errors)
        start = p.number("start_s", 0.0)
        duration = p.number("duration_s", 0.0)
        height = p.power("height", 0.0)
        p.finish()
        out.append(Pulse(start, duration, height))
    return tuple(out)


def _targets(sec: _Section, base):
    sec.used.add("soc_targets")
    raw = sec.table.get("soc_targets")
    if raw is None:
        return base
    if isinstance(raw, list):
        if any(isinstance(q, bool) or not isinstance(q, (int, float)) for q in raw):
            sec._bad("soc_targets", "expected numbers")
            return base
        return tuple(float(q) for q in raw)
    if isinstance(raw, dict):
        rng = _Section("sweep.soc_targets", raw, sec.errors)
        low = rng.number("low", 0.6)
        high = rng.number("high", 0.8)
        count = rng.integer("count", 40)
        rng.finish()
        if count < 1:
            sec._bad("soc_targets.count", "must be >= 1")
            return base
        return default_soc_targets(count, low, high)
    sec._bad("soc_targets", "expected an array or a {low, high, count} table")
    return base


# validator field names -> the config keys a user writes
_KEYS = {
    "system.plant_dt": "system.plant_dt_s", "system.total_time": "system.total_time_s",
    "system.tau_g": "system.tau_g_s", "system.tau_b": "system.tau_b_s",
    "ems.step_time": "ems.step_time_s", "ems.load_filter": "ems.load_filter_s",
    "ems.gen_push": "ems.gen_push_w", "load.baseline": "load.baseline_w",
    "degradation.activation": "degradation.activation_j_per_mol",
    "degradation.temperature": "degradation.temperature_k",
    "degradation.gen_base_rate": "degradation.gen_base_rate_per_s",
    "pcm.initial_charge": "pcm.initial_charge_ah", "pcm.bus_voltage": "system.bus_voltage_v",
}
for _dev in ("pgm", "pcm"):
    _KEYS.update({f"{_dev}.lower_limit": f"{_dev}.lower_w", f"{_dev}.upper_limit": f"{_dev}.upper_w",
                  f"{_dev}.ramp_rate": f"{_dev}.ramp_w_per_s"})


SECTIONS = ("system", "pgm", "pcm", "load", "noise", "ems", "degradation", "sweep")


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from parsed TOML."""
    errors = []
    for key in data:
        if key not in SECTIONS:
            errors.append(("InvalidValue", key, "unknown section"))
    d = Scenario()
    sec = {name: _Section(name, data.get(name, {}), errors) for name in SECTIONS}

    s = sec["system"]
    e0 = d.cfg
    plant_dt = s.number("plant_dt_s", e0.plant_dt)
    ems_period = s.number("ems_period_s", e0.ems_period)
    total_time = s.number("total_time_s", e0.total_time)
    lag = LagParams(s.number("tau_g_s", d.lag.tau_g), s.number("tau_b_s", d.lag.tau_b))
    voltage = s.number("bus_voltage_v", d.batt.bus_voltage)

    g = sec["pgm"]
    gen = _rating(g, d.gen)
    p_g0 = g.power("initial", d.initial_p_g)

    b = sec["pcm"]
    ess = _rating(b, d.ess)
    p_b0 = b.power("initial", d.initial_p_b)
    capacity = b.number("capacity_ah", d.batt.capacity_total)
    if "initial_charge_ah" in b.table and "initial_soc" in b.table:
        b._bad("initial_soc", "give either initial_soc or initial_charge_ah, not both")
    soc0 = b.number("initial_soc", d.batt.initial_soc)
    charge = b.number("initial_charge_ah", soc0 * capacity)
    batt = BatterySpec(capacity, charge, voltage)

    ld = sec["load"]
    csv_path = ld.string("csv", "")
    baseline = ld.power("baseline", 10e6)
    rated = ld.power("rated", LoadProfileSpec(0.0).rated_power)
    pulses = _pulses(ld, errors)
    load = LoadProfileSpec(baseline, pulses, total_time, rated)
    if csv_path:
        path = Path(csv_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            load = TabulatedLoad.from_csv(path)
        except OSError as exc:
            errors.append(("InvalidValue", "load.csv", f"cannot read {path}: {exc}"))

    n = sec["noise"]
    noise = NoiseSpec(n.number("percent", d.noise.percent), n.integer("seed", d.noise.seed))

    m = sec["ems"]
    cfg = EmsConfig(
        horizon=m.integer("horizon", e0.horizon),
        step_time=m.number("step_time_s", e0.step_time),
        cost_weight=m.number("cost_weight", e0.cost_weight),
        target_soc=m.number("target_soc", e0.target_soc),
        plant_dt=plant_dt,
        ems_period=ems_period,
        accel_factor=sec["degradation"].number("accel_factor", e0.accel_factor),
        total_time=total_time,
        soc_policy=m.string("soc_policy", e0.soc_policy),
        soc_gain=m.number("soc_gain", e0.soc_gain),
        load_filter=m.number("load_filter_s", e0.load_filter),
        gen_push=m.power("gen_push", e0.gen_push),
        admm_rho=m.number("admm_rho", e0.admm_rho),
        admm_tol=m.number("admm_tol", e0.admm_tol),
        admm_max_iter=m.integer("admm_max_iter", e0.admm_max_iter),
    )

    k = sec["degradation"]
    f0, a0 = d.fade, d.aging
    fade = BatteryFadeParams(
        k.number("pre_exponent", f0.pre_exponent), k.number("activation_j_per_mol", f0.activation),
        k.number("c_rate_coeff", f0.c_rate_coeff), k.number("gas_const", f0.gas_const),
        k.number("temperature_k", f0.temperature), k.number("exponent", f0.exponent))
    aging = GenAgingParams(k.number("gen_base_rate_per_s", a0.base_rate),
                           k.number("gen_stress_coeff", a0.stress_coeff))

    w = sec["sweep"]
    p0 = SweepPlan()
    w.used.add("noise_levels")
    levels = w.table.get("noise_levels", list(p0.noise_levels))
    if not isinstance(levels, list) or any(isinstance(x, bool) or not isinstance(x, (int, float))
                                           for x in levels):
        errors.append(("InvalidValue", "sweep.noise_levels", "expected an array of numbers"))
        levels = list(p0.noise_levels)
    sweep_dt = w.number("plant_dt_s", None)
    plan = SweepPlan(tuple(float(x) for x in levels), _targets(w, p0.soc_targets),
                     w.integer("replicates", p0.replicates), w.integer("base_seed", p0.base_seed),
                     sweep_dt)

    for item in sec.values():
        item.finish()
    scenario = Scenario(cfg, gen, ess, batt, load, noise, fade, aging, lag, p_g0, p_b0)
    if not errors:
        errors += [(kind, _KEYS.get(key, key), msg) for kind, key, msg in scenario.errors() + plan.errors()]
    if errors:
        raise ConfigError(errors)
    return RunConfig(scenario, plan, csv_path)


def load_config(path) -> RunConfig:
    """Read and validate a TOML file; problems raise :class:`ConfigError` naming the key or path."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([("InvalidValue", "config", f"config file not found: {path}")]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("InvalidValue", "config", f"{path}: {exc}")]) from None
    return parse_config(data, path.parent)


def config_to_dict(rc: RunConfig) -> dict:
    """Inverse of :func:`parse_config`, in SI keys."""
    sc = rc.scenario
    cfg, batt = sc.cfg, sc.batt

    def rating(r: DeviceRating, initial: float):
        return {"rated_w": r.rated_power, "ramp_w_per_s": r.ramp_rate, "lower_w": r.lower_limit,
                "upper_w": r.upper_limit, "initial_w": initial}

    if rc.load_csv:
        load = {"csv": rc.load_csv}
    elif isinstance(sc.load, LoadProfileSpec):
        load = {"baseline_w": sc.load.baseline, "rated_w": sc.load.rated_power,
                "pulses": [{"start_s": p.start, "duration_s": p.duration, "height_w": p.height}
                           for p in sc.load.pulses]}
    else:
        raise ValueError("only pulse-profile or CSV loads can be written to a config file")
    pcm = rating(sc.ess, sc.initial_p_b)
    pcm.update(capacity_ah=batt.capacity_total, initial_charge_ah=batt.initial_charge)
    return {
        "system": {"plant_dt_s": cfg.plant_dt, "ems_period_s": cfg.ems_period,
                   "total_time_s": cfg.total_time, "bus_voltage_v": batt.bus_voltage,
                   "tau_g_s": sc.lag.tau_g, "tau_b_s": sc.lag.tau_b},
        "pgm": rating(sc.gen, sc.initial_p_g),
        "pcm": pcm,
        "load": load,
        "noise": {"percent": sc.noise.percent, "seed": sc.noise.seed},
        "ems": {"horizon": cfg.horizon, "step_time_s": cfg.step_time, "cost_weight": cfg.cost_weight,
                "target_soc": cfg.target_soc,
                "soc_policy": cfg.soc_policy, "soc_gain": cfg.soc_gain,
                "load_filter_s": cfg.load_filter, "gen_push_w": cfg.gen_push,
                "admm_rho": cfg.admm_rho, "admm_tol": cfg.admm_tol, "admm_max_iter": cfg.admm_max_iter},
        "degradation": {"accel_factor": cfg.accel_factor, "pre_exponent": sc.fade.pre_exponent, "activation_j_per_mol": sc.fade.activation,
                        "c_rate_coeff": sc.fade.c_rate_coeff, "gas_const": sc.fade.gas_const,
                        "temperature_k": sc.fade.temperature, "exponent": sc.fade.exponent,
                        "gen_base_rate_per_s": sc.aging.base_rate,
                        "gen_stress_coeff": sc.aging.stress_coeff},
        "sweep": {"noise_levels": list(rc.sweep.noise_levels), "soc_targets": list(rc.sweep.soc_targets),
                  "replicates": rc.sweep.replicates, "base_seed": rc.sweep.base_seed,
                  **({} if rc.sweep.plant_dt is None else {"plant_dt_s": rc.sweep.plant_dt})},
    }


def save_config(rc: RunConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(config_to_dict(rc)))
