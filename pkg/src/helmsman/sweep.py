"""Monte-Carlo sweep over forecast noise and target SoC, with quadratic fits."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .closed_loop import Scenario, run_closed_loop
from .forecast import NoiseSpec
from .model import ConfigError


class DegenerateFit(ValueError):
    """Too few distinct target SoCs for a quadratic fit."""


def default_soc_targets(count: int = 40, low: float = 0.6, high: float = 0.8) -> tuple:
    return tuple(float(q) for q in np.linspace(low, high, count))


@dataclass(frozen=True)
class SweepPlan:
    noise_levels: tuple = tuple(float(p) for p in range(1, 11))
    soc_targets: tuple = default_soc_targets()
    replicates: int = 1
    base_seed: int = 0
    plant_dt: float | None = None  # overrides the scenario's plant step for sweep runs

    def errors(self):
        out = []
        if not self.noise_levels:
            out.append(("InvalidValue", "sweep.noise_levels", "noise_levels must be nonempty"))
        if not self.soc_targets:
            out.append(("InvalidValue", "sweep.soc_targets", "soc_targets must be nonempty"))
        if any(not 0 <= q <= 1 for q in self.soc_targets):
            out.append(("InvalidSoC", "sweep.soc_targets", "targets must lie in [0, 1]"))
        if any(not 0 <= p <= 100 for p in self.noise_levels):
            out.append(("InvalidValue", "sweep.noise_levels", "noise levels must lie in [0, 100]"))
        if not (isinstance(self.replicates, (int, np.integer)) and self.replicates >= 1):
            out.append(("InvalidValue", "sweep.replicates", "replicates must be an integer >= 1"))
        if self.plant_dt is not None and not self.plant_dt > 0:
            out.append(("InvalidValue", "sweep.plant_dt_s", "plant_dt must be positive"))
        return out

    def scenario(self, scenario: Scenario) -> Scenario:
        """``scenario`` at the sweep's plant fidelity."""
        if self.plant_dt is None:
            return scenario
        return replace(scenario, cfg=replace(scenario.cfg, plant_dt=self.plant_dt))

    def tasks(self):
        """``(noise_index, soc_index, replicate, noise, target, seed)`` in merge order."""
        for i, noise in enumerate(self.noise_levels):
            for j, q in enumerate(self.soc_targets):
                for r in range(self.replicates):
                    yield i, j, r, float(noise), float(q), run_seed(self.base_seed, i, j, r)

    def __len__(self):
        return len(self.noise_levels) * len(self.soc_targets) * self.replicates


def run_seed(base_seed: int, noise_index: int, soc_index: int, replicate: int) -> int:
    """Seed of one run, independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed), noise_index, soc_index, replicate])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SweepRecord:
    noise: float
    target_soc: float
    seed: int
    capacity_loss: float
    gen_life: float
    violations: int
    failures: int
    replicate: int = 0
    error: str = ""


def _run_task(args) -> SweepRecord:
    scenario, solver_kind, (i, j, r, noise, q, seed) = args
    sc = replace(scenario, noise=NoiseSpec(noise, seed),
                 cfg=replace(scenario.cfg, target_soc=q))
    try:
        res = run_closed_loop(sc, solver_kind, seed=seed)
    except Exception as exc:  # the record carries the failure instead
        return SweepRecord(noise, q, seed, math.nan, math.nan, -1, -1, r, f"{type(exc).__name__}: {exc}")
    return SweepRecord(noise, q, seed, float(res.capacity_loss), float(res.gen_life_consumed),
                       res.violations, res.failures, r)


def run_sweep(plan: SweepPlan, scenario: Scenario, jobs: int = 1, solver_kind: str = "centralized",
              progress=None) -> list:
    """One closed-loop run per (noise, target, replicate); records come back in plan order."""
    errs = plan.errors()
    if errs:
        raise ConfigError(errs)
    scenario = plan.scenario(scenario).validate()
    work = [(scenario, solver_kind, task) for task in plan.tasks()]
    records = []
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_run_task, work, chunksize=max(1, len(work) // (4 * jobs))):
                records.append(rec)
                if progress:
                    progress(len(records), len(work))
    else:
        for item in work:
            records.append(_run_task(item))
            if progress:
                progress(len(records), len(work))
    return records


@dataclass(frozen=True)
class QuadraticFit:
    noise: float
    a: float
    b: float
    c: float
    r2: float
    points: int

    def __call__(self, q):
        return self.a * np.asarray(q) ** 2 + self.b * np.asarray(q) + self.c


def cell_means(records) -> dict:
    """``{(noise, target): (mean, std, count)}`` over finite replicate losses."""
    cells = {}
    for rec in records:
        cells.setdefault((rec.noise, rec.target_soc), []).append(rec.capacity_loss)
    out = {}
    for key, vals in cells.items():
        v = np.array([x for x in vals if np.isfinite(x)])
        if v.size:
            out[key] = (float(v.mean()), float(v.std()), int(v.size))
    return out


def fit_quadratic(records) -> list:
    """Per-noise least-squares fit ``loss = a q^2 + b q + c`` on cell means."""
    by_noise = {}
    for (noise, q), (mean, _, _) in sorted(cell_means(records).items()):
        by_noise.setdefault(noise, []).append((q, mean))
    fits = []
    for noise, pts in sorted(by_noise.items()):
        q = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        if np.unique(q).size < 3:
            raise DegenerateFit(f"noise {noise}%: need >= 3 distinct target SoCs, got {np.unique(q).size}")
        V = np.vander(q, 3)
        coef, *_ = np.linalg.lstsq(V, y, rcond=None)
        resid = y - V @ coef
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        ss_res = float(resid @ resid)
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        fits.append(QuadraticFit(noise, float(coef[0]), float(coef[1]), float(coef[2]), r2, len(q)))
    return fits


SWEEP_COLUMNS = ["noise_pct", "target_soc", "replicate", "seed", "capacity_loss_pct",
                 "gen_life", "violations", "failures", "error"]
FIT_COLUMNS = ["noise_pct", "a", "b", "c", "r2"]


def _num(x) -> str:
    return repr(float(x))


def write_sweep_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            w.writerow([_num(r.noise), _num(r.target_soc), r.replicate, r.seed, _num(r.capacity_loss),
                        _num(r.gen_life), r.violations, r.failures, r.error])


def write_fit_csv(fits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for f in fits:
            w.writerow([_num(f.noise), _num(f.a), _num(f.b), _num(f.c), _num(f.r2)])


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepRecord(float(r["noise_pct"]), float(r["target_soc"]), int(r["seed"]),
                        float(r["capacity_loss_pct"]), float(r["gen_life"]), int(r["violations"]),
                        int(r["failures"]), int(r["replicate"]), r["error"]) for r in rows]
