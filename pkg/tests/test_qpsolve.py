import numpy as np
import pytest
from scipy.optimize import minimize

from helmsman.qpsolve import QpProblem, QpStatus, TooLarge, dump_qp, load_qp, oracle_solve, solve

from conftest import random_qp


def close(sol, ref):
    obj_ok = abs(sol.objective - ref.objective) <= 1e-6 * (1 + abs(ref.objective))
    x_ok = np.linalg.norm(sol.x - ref.x) <= 1e-5 * (1 + np.linalg.norm(ref.x))
    return obj_ok and x_ok


class TestSmallCases:
    def test_active_bound(self):
        sol = solve(QpProblem([[1.0]], [0.0], lb=[1.0]))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.x[0] == pytest.approx(1.0)
        assert sol.objective == pytest.approx(0.5)

    def test_symmetric_split(self):
        eps = 1e-8
        # (x1 + x2 - 10)^2 + eps |x|^2 written as 0.5 x'Hx + f'x + c
        H = 2 * np.ones((2, 2)) + 2 * eps * np.eye(2)
        qp = QpProblem(H, [-20.0, -20.0], [[1.0, 1.0]], [10.0], lb=[0, 0], ub=[10, 10], constant=100.0)
        sol = solve(qp)
        # curvature along x1 - x2 is only 2*eps, so x is pinned far less tightly than the objective
        np.testing.assert_allclose(sol.x, [5.0, 5.0], rtol=1e-6)
        assert sol.objective == pytest.approx(50 * eps, rel=1e-6)

    @pytest.mark.parametrize("c,lo,hi", [(3.0, -1.0, 2.0), (-5.0, -1.0, 2.0), (0.5, -1.0, 2.0)])
    def test_one_dimensional_projection(self, c, lo, hi):
        qp = QpProblem([[2.0]], [-2.0 * c], lb=[lo], ub=[hi])
        expected = min(max(c, lo), hi)
        assert solve(qp).x[0] == pytest.approx(expected)
        assert oracle_solve(qp).x[0] == pytest.approx(expected)

    def test_unconstrained(self):
        H = np.array([[4.0, 1.0], [1.0, 3.0]])
        f = np.array([1.0, 2.0])
        np.testing.assert_allclose(solve(QpProblem(H, f)).x, np.linalg.solve(H, -f), rtol=1e-12)


class TestOracleEquivalence:
    def test_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            qp = random_qp(rng)
            sol, ref = solve(qp), oracle_solve(qp)
            assert sol.status is QpStatus.OPTIMAL and ref.status is QpStatus.OPTIMAL
            assert close(sol, ref)
            assert sol.kkt_residual <= 1e-8
            assert qp.max_violation(sol.x) <= 1e-8 * (1 + np.abs(sol.x).max())

    def test_against_slsqp(self):
        # independent general-purpose NLP solver on a handful of instances
        rng = np.random.default_rng(5)
        for _ in range(10):
            qp = random_qp(rng)
            cons = [{"type": "ineq", "fun": lambda x, qp=qp: qp.b - qp.A @ x}] if qp.A.shape[0] else []
            if qp.A_eq.shape[0]:
                cons.append({"type": "eq", "fun": lambda x, qp=qp: qp.A_eq @ x - qp.b_eq})
            x0 = 0.5 * (qp.lb + qp.ub)
            ref = minimize(qp.objective, x0, jac=lambda x, qp=qp: qp.H @ x + qp.f, method="SLSQP",
                           bounds=list(zip(qp.lb, qp.ub)), constraints=cons,
                           options={"ftol": 1e-14, "maxiter": 500})
            assert ref.success
            np.testing.assert_allclose(solve(qp).x, ref.x, atol=1e-5)


class TestProperties:
    def test_scaling_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            qp = random_qp(rng)
            x = solve(qp).x
            for factor in (1e-3, 7.0, 1e4):
                np.testing.assert_allclose(solve(qp.scaled(factor)).x, x, atol=1e-7 * (1 + np.abs(x).max()))

    def test_tightening_never_lowers_objective(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            qp = random_qp(rng)
            base = solve(qp)
            j = int(rng.integers(qp.n))
            tight = QpProblem(qp.H, qp.f, qp.A_eq, qp.b_eq, qp.A, qp.b, qp.lb,
                              np.where(np.arange(qp.n) == j, np.maximum(qp.lb, 0.5 * (qp.lb + base.x)), qp.ub))
            sol = solve(tight)
            if sol.status is QpStatus.OPTIMAL:
                assert sol.objective >= base.objective - 1e-9 * (1 + abs(base.objective))

    def test_deterministic(self):
        qp = random_qp(np.random.default_rng(3))
        a, b = solve(qp), solve(qp)
        assert np.array_equal(a.x, b.x) and a.active_set == b.active_set

    def test_warm_start_same_answer(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            qp = random_qp(rng)
            cold = solve(qp)
            warm = solve(qp, warm_start=cold.active_set)
            np.testing.assert_allclose(warm.x, cold.x, atol=1e-8 * (1 + np.abs(cold.x).max()))
            assert warm.iterations <= cold.iterations

    def test_bad_warm_start_ignored(self):
        qp = random_qp(np.random.default_rng(14))
        cold = solve(qp)
        sol = solve(qp, warm_start=(999, -3, 0, 0))
        np.testing.assert_allclose(sol.x, cold.x, atol=1e-8 * (1 + np.abs(cold.x).max()))


class TestFailures:
    def test_contradictory_equality(self):
        qp = QpProblem(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [5.0], lb=[0, 0], ub=[1, 1])
        assert solve(qp).status is QpStatus.INFEASIBLE
        assert oracle_solve(qp).status is QpStatus.INFEASIBLE

    def test_max_iter(self):
        rng = np.random.default_rng(1)
        n = 6
        qp = QpProblem(np.eye(n), -10 * np.ones(n), A=rng.normal(size=(6, n)), b=np.full(6, 0.1),
                       lb=-np.ones(n), ub=np.ones(n))
        sol = solve(qp, max_iter=1)
        assert sol.status is QpStatus.MAX_ITER

    def test_box_order_checked(self):
        with pytest.raises(ValueError):
            QpProblem(np.eye(1), [0.0], lb=[1.0], ub=[0.0])

    def test_asymmetric_hessian(self):
        with pytest.raises(ValueError):
            QpProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])

    def test_oracle_too_large(self):
        with pytest.raises(TooLarge):
            oracle_solve(QpProblem(np.eye(13), np.zeros(13)))


class TestDump:
    def test_round_trip(self, tmp_path):
        qp = random_qp(np.random.default_rng(21))
        path = tmp_path / "qp.txt"
        dump_qp(qp, path)
        back = load_qp(path)
        for name in ("H", "f", "A_eq", "b_eq", "A", "b", "lb", "ub"):
            np.testing.assert_array_equal(getattr(back, name), getattr(qp, name))
        assert back.constant == qp.constant

    def test_bad_header(self, tmp_path):
        path = tmp_path / "qp.txt"
        path.write_text("hello\n")
        with pytest.raises(ValueError):
            load_qp(path)
