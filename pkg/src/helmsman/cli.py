"""Command-line entry point: ``helmsman {simulate,sweep,solve,report}``.

Exit codes: 0 on success, 1 for invalid input (bad flags, config errors,
missing files), 2 when a run fails at runtime.

Config schema (TOML; every key optional, SI defaults shown in the README).
Power keys accept ``_w`` or ``_mw`` spellings, e.g. ``baseline_mw = 8``::

    [system]  plant_dt_s, ems_period_s, total_time_s, bus_voltage_v, tau_g_s, tau_b_s
    [pgm]     rated_w, ramp_w_per_s, lower_w, upper_w, initial_w
    [pcm]     same as [pgm] plus capacity_ah and initial_soc or initial_charge_ah
    [load]    baseline_w, rated_w, pulses = [{start_s, duration_s, height_w}], or csv = "file"
    [noise]   percent, seed
    [ems]     horizon, step_time_s, cost_weight, target_soc, soc_policy, soc_gain,
              load_filter_s, gen_push_w, admm_rho, admm_tol, admm_max_iter
    [degradation]  accel_factor, pre_exponent, activation_j_per_mol, c_rate_coeff, gas_const,
                   temperature_k, exponent, gen_base_rate_per_s, gen_stress_coeff
    [sweep]   noise_levels, soc_targets (array or {low, high, count}), replicates, base_seed,
              plant_dt_s (plant step used by sweep runs)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

from .closed_loop import SOLVERS, initial_instance, run_closed_loop
from .config import SEED_ENV, load_config
from .model import ConfigError
from .qpform import build_qp
from .qpsolve import QpStatus, load_qp, solve
from .reports import (ReportError, plot_trace, read_trace_csv,
                      write_run_reports, write_sweep_reports)
from .sweep import read_sweep_csv, run_sweep

OK, INVALID, RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; bad flags are validation errors here
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="helmsman", description="Receding-horizon EMS for a PGM/PCM shipboard bus.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required):
        sp.add_argument("--config", type=Path, required=config_required, help="TOML config file")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--solver", choices=SOLVERS, default="centralized")
        sp.add_argument("--seed", type=int, help=f"noise seed (env {SEED_ENV} overrides)")
        sp.add_argument("--plot", action="store_true", help="also write SVG charts")

    common(sub.add_parser("simulate", help="closed-loop run"), True)
    sw = sub.add_parser("sweep", help="noise x target-SoC degradation sweep")
    common(sw, True)
    sw.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    so = sub.add_parser("solve", help="solve the first-period MPC QP, or a dumped QP")
    common(so, False)
    so.add_argument("--qp", type=Path, help="QP file written by dump_qp")
    rp = sub.add_parser("report", help="re-render reports from an output directory")
    rp.add_argument("--out", type=Path, required=True, help="directory holding trace.csv or sweep.csv")
    rp.add_argument("--plot", action="store_true", help="accepted for symmetry; report always plots")
    return p


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return getattr(args, "seed", None)


def _simulate(args, out) -> int:
    rc = load_config(args.config)
    seed = _seed(args)
    tic = time.perf_counter()
    res = run_closed_loop(rc.scenario, args.solver, seed=seed)
    extra = {"solver": args.solver, "seed": rc.scenario.noise.seed if seed is None else seed,
             "wall_time_s": round(time.perf_counter() - tic, 3)}
    write_run_reports(res, out, args.plot, extra)
    print(f"{res.steps} periods, {res.violations} violations, {res.failures} failures, "
          f"capacity loss {res.capacity_loss:.6g}% -> {out}")
    return OK


def _sweep(args, out) -> int:
    rc = load_config(args.config)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    plan = rc.sweep
    seed = _seed(args)
    if seed is not None:
        plan = replace(plan, base_seed=seed)
    tic = time.perf_counter()
    records = run_sweep(plan, rc.scenario, args.jobs, args.solver)
    bad = sum(1 for r in records if r.error)
    write_sweep_reports(records, out, args.plot)
    print(f"{len(records)} runs ({bad} failed) in {time.perf_counter() - tic:.1f} s -> {out}")
    return OK


def _solve(args, out) -> int:
    if args.qp is not None:
        if not args.qp.exists():
            raise UsageError(f"QP file not found: {args.qp}")
        qp = load_qp(args.qp)
    elif args.config is not None:
        qp = build_qp(initial_instance(load_config(args.config).scenario, _seed(args)))
    else:
        raise UsageError("solve needs --config or --qp")
    sol = solve(qp)
    doc = {"status": sol.status.value, "objective": sol.objective, "iterations": sol.iterations,
           "x": [float(v) for v in sol.x] if sol.x is not None else None,
           "active_set": [int(i) for i in sol.active_set]}
    text = json.dumps(doc, indent=2)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "solution.json").write_text(text + "\n")
    print(text)
    return OK if sol.status is QpStatus.OPTIMAL else RUNTIME


def _report(args, out) -> int:
    if not out.is_dir():
        raise UsageError(f"output directory not found: {out}")
    done = False
    if (out / "trace.csv").exists():
        plot_trace(read_trace_csv(out / "trace.csv"), out)
        done = True
    if (out / "sweep.csv").exists():
        write_sweep_reports(read_sweep_csv(out / "sweep.csv"), out, plot=True)
        done = True
    if not done:
        raise UsageError(f"no trace.csv or sweep.csv in {out}")
    print(f"reports rendered in {out}")
    return OK


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return INVALID
    except SystemExit as exc:  # --help
        return OK if not exc.code else INVALID
    out = args.out if args.out is not None else (None if args.command == "solve" else Path(args.command))
    handler = {"simulate": _simulate, "sweep": _sweep, "solve": _solve, "report": _report}[args.command]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return handler(args, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main() -> None:
    sys.exit(run_cli())
