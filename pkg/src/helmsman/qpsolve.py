"""Dense convex QP solver and a brute-force verification oracle.

Problems have the form::

    minimize    0.5 x'Hx + f'x + constant
    subject to  A_eq x = b_eq,  A x <= b,  lb <= x <= ub

:func:`solve` is a dual active-set method (Goldfarb-Idnani) working on an
internally rescaled copy of the problem, so that powers in W and unit-scale
test problems see the same tolerances. Infeasibility reported by the active-set
iteration is confirmed with a phase-1 linear program before it is returned.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import _gi_kernel as _kernel


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


class TooLarge(ValueError):
    """The oracle's enumeration budget would be exceeded."""


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        n = self.f.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected ({n}, {n})")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "A_eq")
        self.A, self.b = _rows(self.A, self.b, n, "A")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n)
        if not (np.array_equal(self.H, self.H.T) or np.allclose(self.H, self.H.T, rtol=1e-12, atol=0.0)):
            raise ValueError("H must be symmetric")
        if np.any(self.lb > self.ub):
            raise ValueError("lb exceeds ub")

    @property
    def n(self) -> int:
        return self.f.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.f @ x + self.constant)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = [0.0]
        if self.A_eq.shape[0]:
            v.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if self.A.shape[0]:
            v.append(np.max(self.A @ x - self.b))
        v.append(np.max(self.lb - x))
        v.append(np.max(x - self.ub))
        return float(max(v))

    def scaled(self, factor: float) -> "QpProblem":
        """Same feasible set with the objective multiplied by ``factor``."""
        return QpProblem(self.H * factor, self.f * factor, self.A_eq, self.b_eq,
                         self.A, self.b, self.lb, self.ub, self.constant * factor)


def _rows(M, v, n, name):
    if M is None or np.size(M) == 0:
        return np.zeros((0, n)), np.zeros(0)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    v = np.asarray(v, dtype=float).reshape(-1)
    if M.shape[1] != n or M.shape[0] != v.shape[0]:
        raise ValueError(f"{name} has shape {M.shape} but rhs has {v.shape[0]} rows and n={n}")
    return M, v


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    kkt_residual: float
    iterations: int
    active_set: tuple = field(default=(), repr=False)

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


# ---------------------------------------------------------------------------
# Goldfarb-Idnani dual active-set method
# ---------------------------------------------------------------------------


_SHAPE_CACHE: dict = {}


def _finite_absmax(v) -> float:
    if not v.size:
        return 0.0
    m = np.abs(v).max()
    if np.isfinite(m):
        return float(m)
    fin = v[np.isfinite(v)]
    return float(np.abs(fin).max()) if fin.size else 0.0


def _constraint_shape(A, A_eq, n):
    """Row-normalised constraint normals; cached for read-only matrices."""
    cacheable = not A.flags.writeable and not A_eq.flags.writeable
    key = (id(A), id(A_eq), n)
    if cacheable and key in _SHAPE_CACHE:
        return _SHAPE_CACHE[key][2]
    mA = A.shape[0]
    an = np.linalg.norm(A, axis=1) if mA else np.zeros(0)
    an[an == 0] = 1.0
    en = np.linalg.norm(A_eq, axis=1) if A_eq.shape[0] else np.zeros(0)
    en[en == 0] = 1.0
    eye = np.eye(n)
    C = np.vstack([-A / an[:, None] if mA else np.zeros((0, n)), -eye, eye])
    E = A_eq / en[:, None] if A_eq.shape[0] else np.zeros((0, n))
    a_norm1 = np.abs(A).sum(axis=1) if mA else np.zeros(0)
    e_norm1 = np.abs(A_eq).sum(axis=1) if A_eq.shape[0] else np.zeros(0)
    shape = {
        "C": C, "an": an, "E": E, "en": en, "a_inv": 1.0 / an,
        # zero rows never set the scale
        "a_inv1": np.divide(1.0, a_norm1, out=np.zeros_like(a_norm1), where=a_norm1 > 0),
        "e_inv1": np.divide(1.0, e_norm1, out=np.zeros_like(e_norm1), where=e_norm1 > 0),
        "eq_rank_ok": _full_column_rank(E.T),
        "sanitized": {},  # suggested active set -> usable part (all rows valid)
    }
    if cacheable:
        if len(_SHAPE_CACHE) > 256:
            _SHAPE_CACHE.clear()
        # holding the arrays keeps their ids from being reused
        _SHAPE_CACHE[key] = (A, A_eq, shape)
    return shape


_FACTOR_CACHE = {}


def _inverse_factor(H):
    """``inv(L)'`` with ``H = L L'``, cached for read-only Hessians."""
    cacheable = not H.flags.writeable
    if cacheable and id(H) in _FACTOR_CACHE:
        return _FACTOR_CACHE[id(H)][1]
    L = np.linalg.cholesky(H)
    J = np.ascontiguousarray(np.linalg.inv(L).T)
    if cacheable:
        if len(_FACTOR_CACHE) > 256:
            _FACTOR_CACHE.clear()
        _FACTOR_CACHE[id(H)] = (H, J)
    return J


class _Scaled:
    """Rescaled, row-normalised copy of a problem in ``C y >= d`` form.

    Inequality ids are stable across problems with the same shape: general
    rows first, then upper bounds, then lower bounds.
    """

    def __init__(self, qp: QpProblem):
        n = qp.n
        shape = _constraint_shape(qp.A, qp.A_eq, n)
        self.shape = shape
        sx = max(_finite_absmax(qp.lb), _finite_absmax(qp.ub),
                 _finite_absmax(qp.b * shape["a_inv1"]) if qp.b.size else 0.0,
                 _finite_absmax(qp.b_eq * shape["e_inv1"]) if qp.b_eq.size else 0.0)
        sx = sx if sx > 0 else 1.0
        so = max(float(np.abs(qp.H).max()) * sx * sx, float(np.abs(qp.f).max()) * sx if n else 0.0)
        so = so if so > 0 else 1.0
        self.n, self.sx, self.so = n, sx, so
        self.qp_H = qp.H
        self.H = qp.H * (sx * sx / so)
        self.f = qp.f * (sx / so)
        self.E = shape["E"]
        self.e = qp.b_eq / sx / shape["en"] if qp.b_eq.size else np.zeros(0)
        self.C = shape["C"]
        d = np.concatenate([qp.b * (-1.0 / sx) * shape["a_inv"], qp.ub * (-1.0 / sx), qp.lb * (1.0 / sx)])
        self.valid = np.isfinite(d)
        self.all_valid = bool(self.valid.all())
        self.d = d if self.all_valid else np.where(self.valid, d, 0.0)
        self.m_general = qp.A.shape[0]

    def inverse_factor(self):
        """``inv(L)'`` for the scaled Hessian ``L L'``; raises LinAlgError unless it is positive definite."""
        J = _inverse_factor(self.qp_H)
        return J * (math.sqrt(self.so) / self.sx)

    def unscale(self, y):
        return y * self.sx


def _full_column_rank(N):
    if N.shape[1] == 0:
        return True
    if N.shape[1] > N.shape[0]:
        return False
    s = np.linalg.svd(N, compute_uv=False)
    return s[-1] > 1e-10 * max(1.0, s[0])


class _Degenerate(Exception):
    pass


_NO_ROWS = np.zeros(0, dtype=np.int64)


class _GI:
    def __init__(self, sp: _Scaled, tol: float, max_iter: int):
        self.sp, self.tol, self.max_iter = sp, tol, max_iter
        self.iterations = 0
        self.residual = math.inf

    def sanitize(self, warm):
        """Usable part of a suggested active set (valid rows, independent normals)."""
        sp = self.sp
        if not warm:
            return ()
        memo = sp.shape["sanitized"]
        key = tuple(warm)
        if sp.all_valid and key in memo:
            return memo[key]
        active = [int(i) for i in key if 0 <= i < len(sp.valid) and sp.valid[i]]
        active = tuple(dict.fromkeys(active))
        if active:
            N = np.hstack([sp.E.T, sp.C[list(active)].T])
            if not _full_column_rank(N):
                active = ()
        if sp.all_valid:
            if len(memo) > 4096:
                memo.clear()
            memo[key] = active
        return active

    def run(self, warm=None):
        sp = self.sp
        if not sp.shape["eq_rank_ok"]:
            raise _Degenerate
        args = (sp.H, sp.f, sp.E, sp.e, sp.C, sp.d, sp.valid)
        start = self.sanitize(warm)
        x, u, active, code, its, res = _kernel.gi_solve(
            *args, sp.inverse_factor(), np.array(start, dtype=np.int64) if start else _NO_ROWS,
            self.tol, self.max_iter)
        self.iterations += its
        self.residual = res
        if code == _kernel.SINGULAR:
            raise np.linalg.LinAlgError("singular KKT system")
        status = {_kernel.OPTIMAL: QpStatus.OPTIMAL, _kernel.MAX_ITER: QpStatus.MAX_ITER,
                  _kernel.INFEASIBLE: QpStatus.INFEASIBLE}[code]
        return x, u, [int(i) for i in active], status


def phase_one(qp: QpProblem) -> np.ndarray | None:
    """A feasible point of the constraint set, or ``None`` when it is empty."""
    sp = _Scaled(qp)
    C, d = sp.C[sp.valid], sp.d[sp.valid]
    res = linprog(
        np.zeros(sp.n),
        A_ub=-C if C.shape[0] else None,
        b_ub=-d if C.shape[0] else None,
        A_eq=sp.E if sp.E.shape[0] else None,
        b_eq=sp.e if sp.E.shape[0] else None,
        bounds=[(None, None)] * sp.n,
        method="highs",
    )
    if res.status != 0 or res.x is None:
        return None
    return sp.unscale(np.asarray(res.x))


def solve(qp: QpProblem, tol: float = 1e-8, max_iter: int = 20000, warm_start=None) -> QpSolution:
    """Minimise a strictly convex QP.

    ``warm_start`` is an ``active_set`` from an earlier :class:`QpSolution` of
    a problem with the same shape; rows that do not fit are discarded.
    Tolerances apply to the internally scaled problem (powers normalised by the largest bound, objective by its largest
    coefficient), which makes them relative for badly scaled inputs.
    """
    sp = _Scaled(qp)
    gi = _GI(sp, tol, max_iter)
    try:
        y, u, active, status = gi.run(warm_start)
    except (_Degenerate, np.linalg.LinAlgError):
        y, u, active, status = None, None, [], QpStatus.INFEASIBLE
        try:
            y, u, active, status = _GI(sp, tol, max_iter).run(None)
        except (_Degenerate, np.linalg.LinAlgError):
            pass
    if status is QpStatus.INFEASIBLE:
        point = phase_one(qp)
        if point is None:
            x = np.full(qp.n, np.nan) if y is None else sp.unscale(y)
            return QpSolution(x, math.inf, QpStatus.INFEASIBLE, math.inf, gi.iterations, ())
        # the active-set iteration broke down on a feasible problem
        x = point if y is None else sp.unscale(y)
        return QpSolution(x, qp.objective(x), QpStatus.MAX_ITER, math.inf, gi.iterations, tuple(active))
    res = gi.residual
    if status is QpStatus.OPTIMAL and res > tol:
        status = QpStatus.MAX_ITER
    x = sp.unscale(y)
    return QpSolution(x, qp.objective(x), status, res, gi.iterations, tuple(active))


# ---------------------------------------------------------------------------
# Enumeration oracle
# ---------------------------------------------------------------------------

ORACLE_MAX_N = 12
ORACLE_MAX_ROWS = 30
ORACLE_BUDGET = 2_000_000


def _oracle_rows(qp: QpProblem):
    n = qp.n
    rows, rhs = [], []
    for i in range(qp.A.shape[0]):
        rows.append(qp.A[i])
        rhs.append(qp.b[i])
    for j in range(n):
        if np.isfinite(qp.ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(qp.ub[j])
    for j in range(n):
        if np.isfinite(qp.lb[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-qp.lb[j])
    R = np.array(rows).reshape(-1, n)
    r = np.array(rhs, dtype=float)
    # Opposite parallel rows with a nonempty slab can never be active together.
    exclusive = []
    for i in range(len(r)):
        for k in range(i + 1, len(r)):
            if np.allclose(R[i], -R[k], rtol=0, atol=1e-14) and r[i] + r[k] > 0:
                exclusive.append((i, k))
    return R, r, exclusive


def _count_subsets(m, kmax, exclusive):
    conflict = {}
    for i, k in exclusive:
        conflict.setdefault(i, set()).add(k)
        conflict.setdefault(k, set()).add(i)
    total = 0
    for k in range(kmax + 1):
        total += math.comb(m, k)
    return total, conflict


def oracle_solve(qp: QpProblem, budget: int = ORACLE_BUDGET) -> QpSolution:
    """Exhaustive active-set enumeration for small strictly convex QPs.

    Every subset of inequality rows (at most ``n - rank(A_eq)`` of them) is
    treated as active, the equality-constrained KKT system is solved, and the
    feasible candidate with the least objective is returned.
    """
    n = qp.n
    R, r, exclusive = _oracle_rows(qp)
    m = len(r)
    if n > ORACLE_MAX_N or m > ORACLE_MAX_ROWS:
        raise TooLarge(f"oracle handles n <= {ORACLE_MAX_N} and <= {ORACLE_MAX_ROWS} rows, got n={n}, rows={m}")
    E, e = qp.A_eq, qp.b_eq
    m_e = E.shape[0]
    rank_e = np.linalg.matrix_rank(E) if m_e else 0
    if rank_e < m_e:
        # keep an independent subset of equality rows, check the rest later
        keep = []
        for i in range(m_e):
            if np.linalg.matrix_rank(E[keep + [i]]) > len(keep):
                keep.append(i)
        E, e = E[keep], e[keep]
        m_e = len(keep)
    kmax = max(0, min(m, n - m_e))
    total, conflict = _count_subsets(m, kmax, exclusive)
    if total > budget:
        raise TooLarge(f"{total} active sets exceed the budget of {budget}")

    best_x, best_obj = None, math.inf
    scale = max(1.0, float(np.abs(r).max()) if m else 1.0, float(np.abs(qp.b_eq).max()) if qp.b_eq.size else 1.0)
    feas_tol = 1e-9 * scale
    count = 0
    for k in range(kmax + 1):
        subsets = [s for s in itertools.combinations(range(m), k)
                   if not any(conflict.get(i, set()) & set(s) for i in s)]
        if not subsets:
            continue
        count += len(subsets)
        d = n + m_e + k
        S = np.array(subsets, dtype=int).reshape(len(subsets), k)
        K = np.zeros((len(subsets), d, d))
        K[:, :n, :n] = qp.H
        if m_e:
            K[:, :n, n:n + m_e] = E.T
            K[:, n:n + m_e, :n] = E
        if k:
            Ns = R[S]  # (batch, k, n)
            K[:, :n, n + m_e:] = np.transpose(Ns, (0, 2, 1))
            K[:, n + m_e:, :n] = Ns
        rhs = np.zeros((len(subsets), d))
        rhs[:, :n] = -qp.f
        rhs[:, n:n + m_e] = e
        if k:
            rhs[:, n + m_e:] = r[S]
        sols = _batched_solve(K, rhs)
        for sol in sols:
            if sol is None:
                continue
            x = sol[:n]
            if not np.all(np.isfinite(x)):
                continue
            if qp.max_violation(x) > feas_tol * max(1.0, np.abs(x).max() / scale):
                continue
            obj = qp.objective(x)
            if obj < best_obj:
                best_x, best_obj = x, obj
    if best_x is None:
        return QpSolution(np.full(n, np.nan), math.inf, QpStatus.INFEASIBLE, math.inf, count, ())
    return QpSolution(best_x, best_obj, QpStatus.OPTIMAL, 0.0, count, ())


def _batched_solve(K, rhs):
    try:
        return list(np.linalg.solve(K, rhs[..., None])[..., 0])
    except np.linalg.LinAlgError:
        if len(K) == 1:
            return [None]
        mid = len(K) // 2
        return _batched_solve(K[:mid], rhs[:mid]) + _batched_solve(K[mid:], rhs[mid:])


# ---------------------------------------------------------------------------
# Plain-text dump
# ---------------------------------------------------------------------------

_BLOCKS = ("H", "f", "A_eq", "b_eq", "A", "b", "lb", "ub")


def dump_qp(qp: QpProblem, path) -> None:
    """Write a QP as labelled text blocks (``name rows cols`` then the rows)."""
    lines = ["# helmsman qp v1", f"n {qp.n}", f"constant {qp.constant!r}"]
    for name in _BLOCKS:
        arr = np.atleast_2d(getattr(qp, name))
        if name in ("f", "b_eq", "b", "lb", "ub"):
            arr = arr.reshape(1, -1)
        if arr.size == 0:
            lines.append(f"{name} 0 0")
            continue
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_qp(path) -> QpProblem:
    text = Path(path).read_text().splitlines()
    lines = [ln.strip() for ln in text if ln.strip() and not ln.startswith("#")]
    it = iter(lines)
    header = next(it).split()
    if header[0] != "n":
        raise ValueError(f"{path}: expected 'n <size>' header")
    n = int(header[1])
    constant = 0.0
    blocks = {}
    for line in it:
        parts = line.split()
        if parts[0] == "constant":
            constant = float(parts[1])
            continue
        name, rows, cols = parts[0], int(parts[1]), int(parts[2])
        if name not in _BLOCKS:
            raise ValueError(f"{path}: unknown block {name!r}")
        data = [[float(v) for v in next(it).split()] for _ in range(rows)]
        blocks[name] = np.array(data, dtype=float).reshape(rows, cols)
    def vec(name):
        v = blocks.get(name)
        return None if v is None or v.size == 0 else v.reshape(-1)
    A_eq = blocks.get("A_eq")
    A = blocks.get("A")
    return QpProblem(
        blocks["H"].reshape(n, n), vec("f"),
        A_eq if A_eq is not None and A_eq.size else None, vec("b_eq"),
        A if A is not None and A.size else None, vec("b"),
        vec("lb"), vec("ub"), constant,
    )
