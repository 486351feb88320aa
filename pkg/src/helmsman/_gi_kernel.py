"""Compiled inner loops of the dual active-set QP solver.

The problem arrives already scaled, in the form ``min 0.5 y'Hy + f'y`` subject
to ``E y = e`` and ``C y >= d`` (rows with ``valid`` false are ignored). When
numba is missing the same code runs as plain Python.

The iteration keeps ``J = inv(L)' Q`` and an upper-triangular ``R`` with
``J' N = [R; 0]`` for the active normals ``N``, updated by Givens rotations
as constraints enter and leave, so each step costs O(n^2).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

OPTIMAL, MAX_ITER, INFEASIBLE, SINGULAR = 0, 1, 2, 3


@njit(cache=True)
def _kkt(H, E, C, active, k, top, bot):
    """Solve ``[[H, N], [N', 0]] [a; b] = [top; bot]`` with ``N = [E', C[active]']``."""
    n = H.shape[0]
    me = E.shape[0]
    m = n + me + k
    K = np.zeros((m, m))
    K[:n, :n] = H
    for j in range(me):
        for i in range(n):
            K[i, n + j] = E[j, i]
            K[n + j, i] = E[j, i]
    for j in range(k):
        row = active[j]
        for i in range(n):
            K[i, n + me + j] = C[row, i]
            K[n + me + j, i] = C[row, i]
    rhs = np.empty(m)
    rhs[:n] = top
    rhs[n:] = bot
    sol = np.linalg.solve(K, rhs)
    ok = True
    for i in range(m):
        if not np.isfinite(sol[i]):
            ok = False
    return sol[:n].copy(), sol[n:].copy(), ok


@njit(cache=True)
def _eqp(H, f, E, e, C, d, active, k):
    me = E.shape[0]
    bot = np.empty(me + k)
    bot[:me] = e
    for j in range(k):
        bot[me + j] = d[active[j]]
    x, w, ok = _kkt(H, E, C, active, k, -f, bot)
    return x, -w, ok


@njit(cache=True)
def _residual(H, f, E, e, C, d, valid, active, k, x, u):
    """Largest of stationarity, primal, dual and complementarity errors."""
    n = H.shape[0]
    me = E.shape[0]
    g = H @ x + f
    for j in range(me):
        g -= u[j] * E[j]
    for j in range(k):
        g -= u[me + j] * C[active[j]]
    res = 0.0
    for i in range(n):
        res = max(res, abs(g[i]))
    if me:
        r = E @ x - e
        for j in range(me):
            res = max(res, abs(r[j]))
    slack = C @ x - d
    for i in range(C.shape[0]):
        if valid[i]:
            res = max(res, -slack[i])
    for j in range(k):
        res = max(res, -u[me + j], abs(u[me + j] * slack[active[j]]))
    return res


@njit(cache=True)
def _rotate(J, R, a, b, ca, cb, col0, ncols):
    """Givens rotation zeroing ``(ca, cb)[1]``; applied to J columns a, b and R rows a, b."""
    h = np.hypot(ca, cb)
    if h == 0.0:
        return 0.0
    c, s = ca / h, cb / h
    for i in range(J.shape[0]):
        ja, jb = J[i, a], J[i, b]
        J[i, a] = c * ja + s * jb
        J[i, b] = -s * ja + c * jb
    for j in range(col0, ncols):
        ra, rb = R[a, j], R[b, j]
        R[a, j] = c * ra + s * rb
        R[b, j] = -s * ra + c * rb
    return h


@njit(cache=True)
def _add(J, R, k, d):
    """Append a constraint with ``d = J' normal``; rotations keep ``J' N = [R; 0]``."""
    n = J.shape[0]
    for i in range(n - 1, k, -1):
        h = np.hypot(d[i - 1], d[i])
        if h == 0.0:
            continue
        c, s = d[i - 1] / h, d[i] / h
        for r in range(n):
            ja, jb = J[r, i - 1], J[r, i]
            J[r, i - 1] = c * ja + s * jb
            J[r, i] = -s * ja + c * jb
        d[i - 1] = h
        d[i] = 0.0
    for i in range(k + 1):
        R[i, k] = d[i]
    return k + 1


@njit(cache=True)
def _drop(J, R, u, active, k, j):
    """Remove active entry ``j`` and retriangularise ``R``."""
    for c in range(j, k - 1):
        for i in range(k):
            R[i, c] = R[i, c + 1]
        active[c] = active[c + 1]
        u[c] = u[c + 1]
    for i in range(k):
        R[i, k - 1] = 0.0
    for i in range(j, k - 1):
        h = _rotate(J, R, i, i + 1, R[i, i], R[i + 1, i], i, k - 1)
        if h != 0.0:
            R[i + 1, i] = 0.0
    return k - 1


@njit(cache=True)
def _back(R, k, v):
    """Solve ``R[:k, :k] y = v``."""
    y = v[:k].copy()
    for i in range(k - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, k):
            s -= R[i, j] * y[j]
        y[i] = s / R[i, i]
    return y


@njit(cache=True)
def _forward(R, k, v):
    """Solve ``R[:k, :k]' y = v``."""
    y = v[:k].copy()
    for i in range(k):
        s = y[i]
        for j in range(i):
            s -= R[j, i] * y[j]
        y[i] = s / R[i, i]
    return y


@njit(cache=True)
def _normal(E, C, me, idx):
    return E[idx].copy() if idx < me else C[idx - me].copy()


@njit(cache=True)
def _level(e, d, me, idx):
    return e[idx] if idx < me else d[idx - me]


@njit(cache=True)
def _point(J, R, k, f, E, e, C, d, me, active):
    """Minimiser on the active set and its multipliers from the factorisation."""
    x0 = -(J @ (f @ J))
    rhs = np.empty(k)
    for j in range(k):
        rhs[j] = _level(e, d, me, active[j]) - _normal(E, C, me, active[j]) @ x0
    y = _forward(R, k, rhs)
    yy = np.zeros(J.shape[1])
    yy[:k] = y
    x = x0 + J @ yy
    return x, _back(R, k, y)


@njit(cache=True)
def _rows(act, me, k):
    out = np.empty(k - me, dtype=np.int64)
    for j in range(me, k):
        out[j - me] = act[j] - me
    return out


@njit(cache=True)
def gi_solve(H, f, E, e, C, d, valid, J0, warm, tol, max_iter):
    """Goldfarb-Idnani iteration from the active set ``warm`` (rows of ``C``).

    ``J0`` is ``inv(L)'`` for ``H = L L'``. Returns ``(x, u, active, status,
    iterations, residual)``; ``u`` holds the equality multipliers followed by
    those of ``active``.
    """
    n = H.shape[0]
    me = E.shape[0]
    m = C.shape[0]
    J = J0.copy()
    R = np.zeros((n, n))
    act = np.empty(n + 1, dtype=np.int64)  # equalities as 0..me-1, rows of C shifted by me
    u = np.zeros(n + 1)
    k = 0
    dep_tol = 1e-10
    for j in range(me + warm.shape[0]):
        idx = j if j < me else warm[j - me] + me
        dv = _normal(E, C, me, idx) @ J
        tail = 0.0
        for i in range(k, n):
            tail = max(tail, abs(dv[i]))
        if tail <= dep_tol * max(1.0, np.abs(dv).max()):
            if j < me:
                return np.zeros(n), np.zeros(me), act[:0].copy(), SINGULAR, 0, np.inf
            continue
        act[k] = idx
        k = _add(J, R, k, dv)
    # drop negative multipliers of the start set until it is dual feasible
    while True:
        x, w = _point(J, R, k, f, E, e, C, d, me, act)
        u[:k] = w
        worst, drop = 0.0, -1
        for j in range(me, k):
            if w[j] < worst:
                worst, drop = w[j], j
        if drop < 0:
            break
        k = _drop(J, R, u, act, k, drop)

    feas_tol = 0.1 * tol
    iterations = 0
    in_set = np.zeros(m, dtype=np.bool_)
    for j in range(me, k):
        in_set[act[j] - me] = True
    while True:
        slack = C @ x - d
        p, worst = -1, -feas_tol
        for i in range(m):
            if valid[i] and not in_set[i] and slack[i] < worst:
                worst, p = slack[i], i
        if p < 0:
            break
        cp = C[p].copy()
        up = 0.0  # multiplier gathered by the entering constraint so far
        while True:
            iterations += 1
            if iterations > max_iter:
                return x, u[:k].copy(), _rows(act, me, k), MAX_ITER, iterations, np.inf
            dv = cp @ J
            tail_dv = dv.copy()
            tail_dv[:k] = 0.0
            z = J @ tail_dv
            r = _back(R, k, dv)
            # partial step limit from active inequality multipliers
            t1, drop = np.inf, -1
            for j in range(me, k):
                if r[j] > 0.0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            if drop >= 0:
                t1 = max(t1, 0.0)
            tail = 0.0
            for i in range(k, n):
                tail = max(tail, abs(dv[i]))
            if tail <= dep_tol * max(1.0, np.abs(dv).max()):
                # normal lies in the span of the active ones: pure dual step
                if drop < 0:
                    return x, u[:k].copy(), _rows(act, me, k), INFEASIBLE, iterations, np.inf
                for j in range(k):
                    u[j] -= t1 * r[j]
                up += t1
                in_set[act[drop] - me] = False
                k = _drop(J, R, u, act, k, drop)
                continue
            zc = z @ cp
            t2 = -(cp @ x - d[p]) / zc
            if t2 <= t1:
                x = x + t2 * z
                for j in range(k):
                    u[j] -= t2 * r[j]
                act[k] = p + me
                u[k] = up + t2
                in_set[p] = True
                k = _add(J, R, k, dv)
                break
            x = x + t1 * z
            for j in range(k):
                u[j] -= t1 * r[j]
            up += t1
            in_set[act[drop] - me] = False
            k = _drop(J, R, u, act, k, drop)
    active = _rows(act, me, k)
    uu = u[:k].copy()
    res = _residual(H, f, E, e, C, d, valid, active, k - me, x, uu)
    if res > 0.01 * tol:
        # re-solve on the final set to shed accumulated step error
        try:
            x2, w2, ok = _eqp(H, f, E, e, C, d, active, k - me)
        except Exception:
            ok = False
        if ok:
            res2 = _residual(H, f, E, e, C, d, valid, active, k - me, x2, w2)
            if res2 < res:
                x, uu, res = x2, w2, res2
    return x, uu, active, OPTIMAL, iterations, res
