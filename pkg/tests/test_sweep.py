from dataclasses import replace

import numpy as np
import pytest

from helmsman.closed_loop import Scenario
from helmsman.forecast import LoadProfileSpec, Pulse
from helmsman.model import MW, ConfigError, EmsConfig
from helmsman.sweep import (DegenerateFit, SweepPlan, SweepRecord, cell_means, default_soc_targets,
                            fit_quadratic, read_sweep_csv, run_seed, run_sweep, write_fit_csv,
                            write_sweep_csv)


def tiny_scenario():
    cfg = EmsConfig(total_time=0.05, plant_dt=1e-3, soc_policy="tracking", soc_gain=6.9e-5)
    return Scenario(cfg=cfg, load=LoadProfileSpec(8 * MW, (Pulse(0.0, 0.02, 4 * MW),), 0.05))


def synthetic(fn, noise=1.0, targets=np.linspace(0.6, 0.8, 9)):
    return [SweepRecord(noise, float(q), 0, float(fn(q)), 0.0, 0, 0) for q in targets]


class TestPlan:
    def test_defaults(self):
        plan = SweepPlan()
        assert plan.noise_levels == tuple(float(i) for i in range(1, 11))
        assert len(plan.soc_targets) == 40 and plan.soc_targets[0] == 0.6 and plan.soc_targets[-1] == 0.8
        assert len(plan) == 400 and len(list(plan.tasks())) == 400

    def test_linspace(self):
        np.testing.assert_allclose(default_soc_targets(3, 0.6, 0.8), (0.6, 0.7, 0.8), rtol=1e-15)

    @pytest.mark.parametrize("kw", [{"noise_levels": ()}, {"soc_targets": ()}, {"replicates": 0},
                                    {"soc_targets": (1.2,)}, {"plant_dt": 0.0}])
    def test_validation(self, kw):
        with pytest.raises(ConfigError):
            run_sweep(SweepPlan(**kw), tiny_scenario())

    def test_seeds_depend_on_cell_only(self):
        assert run_seed(0, 1, 2, 0) == run_seed(0, 1, 2, 0)
        seeds = {run_seed(0, i, j, r) for i in range(3) for j in range(3) for r in range(2)}
        assert len(seeds) == 18
        assert run_seed(1, 0, 0, 0) != run_seed(0, 0, 0, 0)


class TestRunSweep:
    def test_unit_plan(self):
        recs = run_sweep(SweepPlan((5.0,), (0.77,)), tiny_scenario())
        assert len(recs) == 1 and recs[0].error == "" and recs[0].capacity_loss > 0

    def test_record_count_and_order(self):
        plan = SweepPlan((1.0, 10.0), (0.7, 0.75, 0.8), replicates=2)
        recs = run_sweep(plan, tiny_scenario())
        assert len(recs) == 12
        assert [(r.noise, r.target_soc, r.replicate) for r in recs] == [(n, q, r) for n in plan.noise_levels
                                                                        for q in plan.soc_targets for r in range(2)]

    def test_parallel_matches_serial(self, tmp_path):
        plan = SweepPlan((1.0, 10.0), (0.7, 0.8), base_seed=5)
        write_sweep_csv(run_sweep(plan, tiny_scenario(), jobs=1), tmp_path / "a.csv")
        write_sweep_csv(run_sweep(plan, tiny_scenario(), jobs=2), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_errors_land_in_records(self, monkeypatch):
        from helmsman import sweep

        real = sweep.run_closed_loop

        def flaky(sc, kind, seed=None):
            if sc.cfg.target_soc == 0.7:
                raise RuntimeError("solver exploded")
            return real(sc, kind, seed=seed)

        monkeypatch.setattr(sweep, "run_closed_loop", flaky)
        recs = run_sweep(SweepPlan((1.0,), (0.7, 0.8)), tiny_scenario())
        assert len(recs) == 2
        assert recs[0].error == "RuntimeError: solver exploded" and np.isnan(recs[0].capacity_loss)
        assert recs[1].error == "" and recs[1].capacity_loss > 0

    def test_plant_override(self):
        plan = SweepPlan((1.0,), (0.7,), plant_dt=1e-3)
        sc = replace(tiny_scenario(), cfg=replace(tiny_scenario().cfg, plant_dt=1e-4))
        assert plan.scenario(sc).cfg.plant_dt == 1e-3


class TestFit:
    def test_exact_quadratic(self):
        fit, = fit_quadratic(synthetic(lambda q: 2 * q * q - q + 3))
        assert (fit.a, fit.b, fit.c) == pytest.approx((2.0, -1.0, 3.0), rel=1e-9)
        assert fit.r2 == pytest.approx(1.0)

    def test_noisy_quadratic(self):
        rng = np.random.default_rng(0)
        fit, = fit_quadratic(synthetic(lambda q: 50 * q * q - 40 * q + 10 + rng.normal(0, 0.01),
                                       targets=np.linspace(0.6, 0.8, 40)))
        assert fit.r2 >= 0.99

    def test_flat(self):
        fit, = fit_quadratic(synthetic(lambda q: 4.0))
        assert fit.a == pytest.approx(0.0, abs=1e-9) and fit.b == pytest.approx(0.0, abs=1e-9)
        assert fit.c == pytest.approx(4.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateFit):
            fit_quadratic(synthetic(lambda q: q, targets=[0.7, 0.7, 0.7]))

    def test_groups_and_means(self):
        recs = synthetic(lambda q: q, noise=1.0) + synthetic(lambda q: 2 * q, noise=2.0)
        recs.append(SweepRecord(1.0, 0.6, 1, 0.8, 0.0, 0, 0, replicate=1))  # second replicate
        assert cell_means(recs)[(1.0, 0.6)] == pytest.approx((0.7, 0.1, 2))
        assert [f.noise for f in fit_quadratic(recs)] == [1.0, 2.0]

    def test_nan_records_skipped(self):
        recs = synthetic(lambda q: q) + [SweepRecord(1.0, 0.65, 0, float("nan"), 0.0, -1, -1, error="boom")]
        assert fit_quadratic(recs)[0].points == 9


class TestCsv:
    def test_round_trip(self, tmp_path):
        recs = synthetic(lambda q: q * q + 1 / 3)
        write_sweep_csv(recs, tmp_path / "s.csv")
        assert read_sweep_csv(tmp_path / "s.csv") == recs

    def test_fit_columns(self, tmp_path):
        write_fit_csv(fit_quadratic(synthetic(lambda q: q * q)), tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "noise_pct,a,b,c,r2"
