import json
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from helmsman.cli import run_cli
from helmsman.closed_loop import run_closed_loop
from helmsman.config import load_config
from helmsman.qpform import build_qp
from helmsman.closed_loop import initial_instance
from helmsman.qpsolve import dump_qp
from helmsman.reports import (TRACE_COLUMNS, line_chart, read_trace_csv, write_run_reports,
                              write_sweep_reports, write_trace_csv)
from helmsman.sweep import SweepRecord

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.toml"


@pytest.fixture(scope="module")
def smoke_result():
    return run_closed_loop(load_config(SMOKE).scenario)


class TestReports:
    def test_trace_rows(self, smoke_result, tmp_path):
        write_trace_csv(smoke_result, tmp_path / "trace.csv")
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert len(lines) == smoke_result.steps + 1

    def test_trace_round_trip(self, smoke_result, tmp_path):
        write_trace_csv(smoke_result, tmp_path / "trace.csv")
        back = read_trace_csv(tmp_path / "trace.csv")
        assert np.array_equal(back["p_g_w"], smoke_result.p_g)
        assert np.array_equal(back["soc"], smoke_result.soc)
        assert back["status"] == smoke_result.status

    def test_byte_identical(self, smoke_result, tmp_path):
        write_run_reports(smoke_result, tmp_path / "a", plot=True)
        write_run_reports(smoke_result, tmp_path / "b", plot=True)
        for name in ("trace.csv", "summary.json", "supply_vs_load.svg", "soc.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_svg_self_contained(self):
        svg = line_chart([("a", [0, 1, 2], [1, 3, 2])], "t <1>", "x", "y")
        assert svg.startswith("<svg") and "<polyline" in svg and "t &lt;1&gt;" in svg
        assert "href" not in svg and "http://www.w3.org/2000/svg" in svg

    def test_empty_sweep_warns(self, tmp_path):
        with pytest.warns(RuntimeWarning, match="fit skipped"):
            paths = write_sweep_reports([], tmp_path, plot=True)
        assert [p.name for p in paths] == ["sweep.csv"]

    def test_sweep_chart(self, tmp_path):
        recs = [SweepRecord(n, q, 0, n * (q - 0.7) ** 2 + 1, 0.0, 0, 0) for n in (1.0, 2.0)
                for q in np.linspace(0.6, 0.8, 5)]
        names = [p.name for p in write_sweep_reports(recs, tmp_path, plot=True)]
        assert names == ["sweep.csv", "fit.csv", "degradation_curve.svg"]

    def test_unwritable(self, smoke_result, tmp_path):
        (tmp_path / "file").write_text("")
        with pytest.raises(OSError, match="file"):
            write_run_reports(smoke_result, tmp_path / "file" / "out")


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        tic = time.perf_counter()
        code = run_cli(["simulate", "--config", str(SMOKE), "--solver", "centralized", "--out", str(tmp_path / "run1"),
                        "--plot"])
        assert code == 0 and time.perf_counter() - tic < 30
        out = tmp_path / "run1"
        assert {p.name for p in out.iterdir()} == {"trace.csv", "summary.json", "supply_vs_load.svg", "soc.svg"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["violations"] == 0 and summary["steps"] == 1000

    def test_simulate_admm(self, tmp_path):
        cfg = tmp_path / "short.toml"
        cfg.write_text(SMOKE.read_text().replace("total_time_s = 1.0", "total_time_s = 0.02")
                       .replace("duration_s = 0.5", "duration_s = 0.01"))
        assert run_cli(["simulate", "--config", str(cfg), "--solver", "admm", "--out", str(tmp_path / "r")]) == 0

    def test_sweep_and_report(self, tmp_path):
        tic = time.perf_counter()
        out = tmp_path / "s1"
        assert run_cli(["sweep", "--config", str(SMOKE), "--out", str(out), "--plot", "--jobs", "1"]) == 0
        assert time.perf_counter() - tic < 30
        assert {"sweep.csv", "fit.csv", "degradation_curve.svg"} <= {p.name for p in out.iterdir()}
        (out / "degradation_curve.svg").unlink()
        assert run_cli(["report", "--out", str(out)]) == 0
        assert (out / "degradation_curve.svg").exists()

    def test_report_on_run(self, tmp_path):
        out = tmp_path / "r"
        run_cli(["simulate", "--config", str(SMOKE), "--out", str(out)])
        assert not (out / "soc.svg").exists()
        assert run_cli(["report", "--out", str(out)]) == 0
        assert (out / "soc.svg").exists() and (out / "supply_vs_load.svg").exists()

    def test_solve_from_config(self, tmp_path, capsys):
        assert run_cli(["solve", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "solution.json").read_text())
        assert doc["status"] == "Optimal" and len(doc["x"]) == 20

    def test_solve_dump(self, tmp_path, capsys):
        path = tmp_path / "qp.txt"
        dump_qp(build_qp(initial_instance(load_config(SMOKE).scenario)), path)
        assert run_cli(["solve", "--qp", str(path)]) == 0
        assert json.loads(capsys.readouterr().out)["status"] == "Optimal"

    def test_seed_env_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HELMSMAN_SEED", "7")
        run_cli(["simulate", "--config", str(SMOKE), "--seed", "1", "--out", str(tmp_path / "a")])
        monkeypatch.delenv("HELMSMAN_SEED")
        run_cli(["simulate", "--config", str(SMOKE), "--seed", "7", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
        assert json.loads((tmp_path / "a" / "summary.json").read_text())["seed"] == 7

    def test_bad_seed_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HELMSMAN_SEED", "abc")
        assert run_cli(["simulate", "--config", str(SMOKE), "--out", str(tmp_path)]) == 1

    def test_missing_config(self, tmp_path, capsys):
        path = tmp_path / "missing.toml"
        assert run_cli(["simulate", "--config", str(path)]) == 1
        assert str(path) in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["simulate"], ["sweep"], ["simulate", "--config", "x", "--bogus"],
                                      ["simulate", "--config", "x", "--solver", "quadprog"], ["launch"], [],
                                      ["solve"]])
    def test_validation_errors(self, argv, capsys):
        assert run_cli(argv) == 1

    def test_flag_named(self, capsys):
        run_cli(["simulate", "--config", str(SMOKE), "--bogus"])
        assert "--bogus" in capsys.readouterr().err

    def test_config_key_named(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[ems]\nhorizn = 3\n")
        assert run_cli(["simulate", "--config", str(cfg)]) == 1
        assert "ems.horizn" in capsys.readouterr().err

    def test_runtime_error(self, tmp_path):
        (tmp_path / "file").write_text("")
        assert run_cli(["simulate", "--config", str(SMOKE), "--out", str(tmp_path / "file" / "run")]) == 2

    def test_empty_sweep_exit_zero(self, tmp_path, monkeypatch, capsys):
        from helmsman import cli
        monkeypatch.setattr(cli, "run_sweep", lambda *a, **k: [])
        assert run_cli(["sweep", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
        assert "fit skipped" in capsys.readouterr().err
        assert (tmp_path / "sweep.csv").exists() and not (tmp_path / "fit.csv").exists()

    def test_help(self, capsys):
        assert run_cli(["--help"]) == 0
