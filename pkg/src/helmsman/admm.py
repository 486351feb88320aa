"""Distributed solution of the power-split problem by scaled ADMM.

The weighted multi-load tracking problem is first reduced to a scalar-weight
sharing problem (:func:`reduce`). ADMM then splits that problem into one
small QP per node, coupled by an aggregator signal ``a`` that every node
receives each iteration::

    a^t     = alpha / (alpha*n_x + rho) * (m - sum_j z_j^t)
    x_j^t+1 = argmin_{x in X_j} C_j(x) + rho/2 |x - x_j^t - a^t|^2
    z_j^t+1 = 2 x_j^t+1 - x_j^t - a^t

with ``z_j = x_j + u_j`` and the dummy variable ``y_j = z_j + a``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import BatterySpec, DeviceRating, QuadraticCost
from .qpform import MpcInstance, _structure, rate_matrix, soc_energy_rhs
from .qpsolve import QpProblem, QpStatus, solve


class SingularWeight(ValueError):
    """The load weight matrix is not symmetric positive definite."""


class NodeInfeasible(RuntimeError):
    """A node subproblem has an empty feasible set."""


@dataclass(frozen=True)
class NodeSpec:
    """Local feasible set and cost of one node.

    The set is ``lower <= x <= upper`` and ``|x_k - x_{k-1}| <= ramp`` with
    ``x_0 = initial`` (the first ramp row is dropped when ``initial`` is None),
    plus ``sum(x) = total`` when ``total`` is given. The cost is
    ``c2*|x|^2 + c1*sum(x)``.
    """

    horizon: int
    lower: float
    upper: float
    ramp: float = np.inf  # W per step
    initial: float | None = None
    total: float | None = None
    c2: float = 0.0
    c1: float = 0.0
    name: str = "node"

    def cost(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.c2 * x @ x + self.c1 * x.sum())

    def violation(self, x) -> float:
        """Largest constraint violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        v = [0.0, float(np.max(self.lower - x)), float(np.max(x - self.upper))]
        if np.isfinite(self.ramp):
            prev = np.concatenate([[x[0] if self.initial is None else self.initial], x[:-1]])
            v.append(float(np.max(np.abs(x - prev) - self.ramp)))
        if self.total is not None:
            v.append(abs(float(x.sum()) - self.total))
        return max(v)


@lru_cache(maxsize=32)
def _ramp_rows(h: int):
    D = rate_matrix(h)
    A = np.vstack([D, -D])
    A.setflags(write=False)
    ones = np.ones((1, h))
    ones.setflags(write=False)
    return A, ones


def node_qp(node: NodeSpec, target, rho: float) -> QpProblem:
    """QP for ``argmin_{x in X} C(x) + rho/2 |x - target|^2``."""
    h = node.horizon
    target = np.asarray(target, dtype=float)
    H = (2.0 * node.c2 + rho) * np.eye(h)
    f = node.c1 - rho * target
    A = b = None
    if np.isfinite(node.ramp):
        A, _ = _ramp_rows(h)
        b = np.full(2 * h, float(node.ramp))
        if node.initial is None:
            b[0] = b[h] = np.inf
        else:
            b[0] += node.initial
            b[h] -= node.initial
    A_eq = b_eq = None
    if node.total is not None:
        _, A_eq = _ramp_rows(h)
        b_eq = np.array([float(node.total)])
    return QpProblem(H, f, A_eq, b_eq, A, b, np.full(h, float(node.lower)),
                     np.full(h, float(node.upper)), constant=0.5 * rho * float(target @ target))


def node_prox(node: NodeSpec, target, rho: float, warm=None):
    """Constrained proximal step of one node; returns ``(x, active_set)``."""
    sol = solve(node_qp(node, target, rho), warm_start=warm)
    if sol.status is QpStatus.INFEASIBLE:
        raise NodeInfeasible(f"{node.name}: empty feasible set")
    return sol.x, sol.active_set


@dataclass(frozen=True)
class GeneratorNodeSpec:
    """Generators sharing one aggregate profile through fixed droop shares.

    Generator ``j`` produces ``theta_j * p_g``. The aggregate box and ramp are
    the tightest implied by any individual rating, which reduces to the
    ``p_bar/theta_bar`` form for identical units.
    """

    ratings: tuple
    shares: tuple = (1.0,)
    costs: tuple | None = None

    def __post_init__(self):
        th = np.asarray(self.shares, dtype=float)
        if len(self.ratings) != len(th):
            raise ValueError("one droop share per generator is required")
        if np.any(th <= 0) or abs(th.sum() - 1.0) > 1e-12:
            raise ValueError("droop shares must be positive and sum to 1")

    @property
    def theta_bar(self) -> float:
        return float(max(self.shares))

    def aggregate_cost(self) -> QuadraticCost:
        costs = self.costs or (QuadraticCost(),) * len(self.ratings)
        th = self.shares
        return QuadraticCost(sum(c.c2 * t * t for c, t in zip(costs, th)),
                             sum(c.c1 * t for c, t in zip(costs, th)))

    def node(self, horizon: int, step_time: float, measured: float | None = None,
             cost_weight: float = 1.0, eps: float = 0.0) -> NodeSpec:
        th = self.shares
        lower = max(r.lower_limit / t for r, t in zip(self.ratings, th))
        upper = min(r.upper_limit / t for r, t in zip(self.ratings, th))
        ramp = min(r.step_ramp(step_time) / t for r, t in zip(self.ratings, th))
        initial = None
        if measured is not None:
            initial = min(max(measured, lower), upper)
        c = self.aggregate_cost()
        return NodeSpec(horizon, lower, upper, ramp, initial, None,
                        cost_weight * c.c2 + 0.5 * eps, cost_weight * c.c1, "generator")

    def split(self, p_g) -> np.ndarray:
        """Individual generator profiles ``theta_j * p_g`` (one row per unit)."""
        return np.outer(self.shares, np.asarray(p_g, dtype=float))


def ess_node(batt: BatterySpec, rating: DeviceRating, q0: float, qh: float, horizon: int,
             step_time: float, measured: float | None = None, cost: QuadraticCost | None = None,
             cost_weight: float = 1.0, eps: float = 0.0, name: str = "ess") -> NodeSpec:
    cost = cost or QuadraticCost()
    initial = None if measured is None else rating.clamp(measured)
    return NodeSpec(horizon, rating.lower_limit, rating.upper_limit, rating.step_ramp(step_time),
                    initial, soc_energy_rhs(batt, q0, qh, step_time),
                    cost_weight * cost.c2 + 0.5 * eps, cost_weight * cost.c1, name)


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedTrackingProblem:
    """``sum_k beta/2 |l_k - l_k^f|_W^2 + sum_j C_j(x_j)`` with ``1'x_k = 1'l_k``.

    ``forecasts`` has one row per step and one column per load.
    """

    beta: float
    weight: np.ndarray
    forecasts: np.ndarray
    nodes: tuple

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weight, dtype=float))
        F = np.asarray(self.forecasts, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
        object.__setattr__(self, "weight", W)
        object.__setattr__(self, "forecasts", F)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if W.shape != (F.shape[1], F.shape[1]):
            raise ValueError("weight must be n_l x n_l")


@dataclass(frozen=True)
class ReducedProblem:
    alpha: float
    m: np.ndarray
    nodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(-1))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        for nd in self.nodes:
            if nd.horizon != self.horizon:
                raise ValueError(f"{nd.name}: horizon {nd.horizon} != {self.horizon}")

    @property
    def horizon(self) -> int:
        return self.m.shape[0]

    def objective(self, xs) -> float:
        supply = np.sum(xs, axis=0)
        return float(0.5 * self.alpha * np.sum((supply - self.m) ** 2)
                     + sum(nd.cost(x) for nd, x in zip(self.nodes, xs)))


def reduce(problem: WeightedTrackingProblem) -> ReducedProblem:
    W = problem.weight
    if not np.allclose(W, W.T, rtol=1e-12, atol=1e-14):
        raise SingularWeight("weight matrix is not symmetric")
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError as exc:
        raise SingularWeight("weight matrix is not positive definite") from exc
    ones = np.ones(W.shape[0])
    denom = float(ones @ np.linalg.solve(W, ones))
    return ReducedProblem(problem.beta / denom, problem.forecasts.sum(axis=1), problem.nodes)


def _node_blocks(nodes, h):
    """Stack node sets into block constraints over ``[x_1; ...; x_n]``."""
    n = len(nodes) * h
    A_rows, b_rows, E_rows, e_rows = [], [], [], []
    lb, ub = np.empty(n), np.empty(n)
    for j, nd in enumerate(nodes):
        sl = slice(j * h, (j + 1) * h)
        lb[sl], ub[sl] = nd.lower, nd.upper
        if np.isfinite(nd.ramp):
            A = np.zeros((2 * h, n))
            A[:, sl] = _ramp_rows(h)[0]
            b = np.full(2 * h, float(nd.ramp))
            if nd.initial is None:
                b[0] = b[h] = np.inf
            else:
                b[0] += nd.initial
                b[h] -= nd.initial
            keep = np.isfinite(b)
            A_rows.append(A[keep])
            b_rows.append(b[keep])
        if nd.total is not None:
            E = np.zeros((1, n))
            E[0, sl] = 1.0
            E_rows.append(E)
            e_rows.append([nd.total])
    A = np.vstack(A_rows) if A_rows else None
    b = np.concatenate(b_rows) if b_rows else None
    E = np.vstack(E_rows) if E_rows else None
    e = np.concatenate(e_rows) if e_rows else None
    return A, b, E, e, lb, ub


def _cost_terms(nodes, h):
    c2 = np.repeat([nd.c2 for nd in nodes], h)
    c1 = np.repeat([nd.c1 for nd in nodes], h)
    return 2.0 * np.diag(c2), c1


def reduced_qp(problem: ReducedProblem) -> QpProblem:
    """The reduced problem as one QP over the stacked node profiles."""
    h, nodes = problem.horizon, problem.nodes
    S = np.tile(np.eye(h), (1, len(nodes)))
    Hc, fc = _cost_terms(nodes, h)
    H = problem.alpha * S.T @ S + Hc
    f = -problem.alpha * S.T @ problem.m + fc
    A, b, E, e, lb, ub = _node_blocks(nodes, h)
    return QpProblem(H, f, E, e, A, b, lb, ub, 0.5 * problem.alpha * float(problem.m @ problem.m))


def joint_qp(problem: WeightedTrackingProblem) -> QpProblem:
    """The unreduced problem as one QP over ``[x; l_1; ...; l_h]``.

    The supplied loads ``l_k`` are free variables tied to the node supply by
    ``1'x_k = 1'l_k``.
    """
    F, W, beta = problem.forecasts, problem.weight, problem.beta
    h, nl = F.shape
    nodes = problem.nodes
    nx = len(nodes) * h
    n = nx + h * nl
    H = np.zeros((n, n))
    f = np.zeros(n)
    Hc, fc = _cost_terms(nodes, h)
    H[:nx, :nx] = Hc
    f[:nx] = fc
    const = 0.0
    for k in range(h):
        sl = slice(nx + k * nl, nx + (k + 1) * nl)
        H[sl, sl] = beta * W
        f[sl] = -beta * W @ F[k]
        const += 0.5 * beta * float(F[k] @ W @ F[k])
    A, b, E, e, lb, ub = _node_blocks(nodes, h)
    pad = lambda M: None if M is None else np.hstack([M, np.zeros((M.shape[0], h * nl))])
    balance = np.zeros((h, n))
    for k in range(h):
        balance[k, [j * h + k for j in range(len(nodes))]] = 1.0
        balance[k, nx + k * nl: nx + (k + 1) * nl] = -1.0
    E_all = balance if E is None else np.vstack([pad(E), balance])
    e_all = np.zeros(h) if e is None else np.concatenate([e, np.zeros(h)])
    lb_all = np.concatenate([lb, np.full(h * nl, -np.inf)])
    ub_all = np.concatenate([ub, np.full(h * nl, np.inf)])
    return QpProblem(H, f, E_all, e_all, pad(A), b, lb_all, ub_all, const)


def from_mpc_instance(inst: MpcInstance, generators: GeneratorNodeSpec | None = None) -> ReducedProblem:
    """Reduced problem whose minimiser equals the centralized MPC QP's.

    The centralized objective ``|S x - l|^2 + gamma*C + eps/2 |x|^2`` is the
    reduced objective with ``alpha = 2``, ``m = forecast`` and node costs
    ``gamma*C_j + eps/2 |x_j|^2``. Each generator is its own node unless
    ``generators`` groups them under droop sharing.
    """
    h = inst.horizon
    eps = _structure(h, inst.devices, inst.costs(), float(inst.cost_weight), float(inst.step_time))[7]
    gamma = float(inst.cost_weight)
    costs = inst.costs()
    measured = inst.measured()
    nodes = []
    if generators is not None:
        meas = sum(measured[: len(inst.gens)])
        nodes.append(generators.node(h, inst.step_time, meas, gamma, eps))
    else:
        for i, g in enumerate(inst.gens):
            c = costs[i]
            nodes.append(NodeSpec(h, g.lower_limit, g.upper_limit, g.step_ramp(inst.step_time),
                                  measured[i], None, gamma * c.c2 + 0.5 * eps, gamma * c.c1,
                                  f"generator{i}"))
    ng = len(inst.gens)
    for j, (dev, batt, q0, qh) in enumerate(zip(inst.esss, inst.batteries, inst.soc_now, inst.soc_target)):
        nodes.append(ess_node(batt, dev, q0, qh, h, inst.step_time, measured[ng + j], costs[ng + j],
                              gamma, eps, f"ess{j}"))
    return ReducedProblem(2.0, inst.forecast, tuple(nodes))


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------

@dataclass
class AdmmState:
    x: list
    u: list
    rho: float
    t: int = 0
    a: np.ndarray | None = None
    warm: list = field(default_factory=list)

    @classmethod
    def initial(cls, problem: ReducedProblem, rho: float, x0=None):
        h, n = problem.horizon, len(problem.nodes)
        x = [np.zeros(h) for _ in range(n)] if x0 is None else [np.array(v, dtype=float) for v in x0]
        return cls(x, [np.zeros(h) for _ in range(n)], float(rho), 0, None, [None] * n)

    @property
    def z(self) -> list:
        return [x + u for x, u in zip(self.x, self.u)]


def aggregator_step(state: AdmmState, m, alpha: float, n_x: int | None = None) -> np.ndarray:
    z = state.z
    n_x = len(z) if n_x is None else n_x
    return alpha / (alpha * n_x + state.rho) * (np.asarray(m, dtype=float) - np.sum(z, axis=0))


def node_step(node: NodeSpec, x_prev, a, rho: float, warm=None):
    """One node update; returns ``(x_new, z_new, active_set)``."""
    x_prev = np.asarray(x_prev, dtype=float)
    x_new, active = node_prox(node, x_prev + a, rho, warm)
    return x_new, 2.0 * x_new - x_prev - a, active


def generator_node_step(spec: NodeSpec, x_prev, a, rho: float, warm=None):
    return node_step(spec, x_prev, a, rho, warm)


def ess_node_step(spec: NodeSpec, x_prev, a, rho: float, warm=None):
    return node_step(spec, x_prev, a, rho, warm)


def admm_iteration(problem: ReducedProblem, state: AdmmState):
    """One synchronous iteration; returns the new state and ``(primal, dual)`` residuals.

    Node updates only read the broadcast ``a`` and their own previous
    iterate, so a driver may run them in parallel.
    """
    a = aggregator_step(state, problem.m, problem.alpha)
    y_old = None if state.a is None else [z + state.a for z in state.z]
    xs, us, warm, primal = [], [], [], 0.0
    for j, node in enumerate(problem.nodes):
        x_new, z_new, active = node_step(node, state.x[j], a, state.rho, state.warm[j])
        xs.append(x_new)
        us.append(z_new - x_new)
        warm.append(active)
        y = state.x[j] + state.u[j] + a
        primal = max(primal, float(np.linalg.norm(x_new - y)))
    if y_old is None:
        dual = np.inf
    else:
        y_new = [state.x[j] + state.u[j] + a for j in range(len(xs))]
        dual = state.rho * max(float(np.linalg.norm(p - q)) for p, q in zip(y_new, y_old))
    return AdmmState(xs, us, state.rho, state.t + 1, a, warm), (primal, dual)


@dataclass
class AdmmResult:
    x: list
    converged: bool
    iterations: int
    trace: list  # (iteration, primal, dual, objective), residuals relative to the load scale

    @property
    def supply(self) -> np.ndarray:
        return np.sum(self.x, axis=0)

    @property
    def status(self) -> QpStatus:
        return QpStatus.OPTIMAL if self.converged else QpStatus.MAX_ITER


def run_admm(problem: ReducedProblem, rho: float = 1.0, tol: float = 1e-6,
             max_iter: int = 5000, x0=None) -> AdmmResult:
    """Iterate until both residuals fall below ``tol``.

    Residuals are divided by ``max(1, |m|_inf)`` so ``tol`` is relative to the
    load. On ``MaxIter`` the last iterate is returned with ``converged=False``.
    """
    scale = max(1.0, float(np.max(np.abs(problem.m))) if problem.m.size else 1.0)
    state = AdmmState.initial(problem, rho, x0)
    trace = []
    for _ in range(max_iter):
        state, (primal, dual) = admm_iteration(problem, state)
        r, s = primal / scale, dual / scale
        trace.append((state.t, r, s, problem.objective(state.x)))
        if r <= tol and s <= tol:
            return AdmmResult(state.x, True, state.t, trace)
    return AdmmResult(state.x, False, state.t, trace)


def write_trace_csv(result: AdmmResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "primal_residual", "dual_residual", "objective"])
        for it, r, s, obj in result.trace:
            w.writerow([it, repr(float(r)), repr(float(s)), repr(float(obj))])
