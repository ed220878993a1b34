"""Dense bounded-variable primal simplex (internal; see lp.solve_lp).

Works on  min c.z  s.t.  M z = b,  lo <= z <= hi  where M = [A | I] carries one
logical (slack) column per row. Phase 1 is the composite one: the cost of a
basic variable is +1 above its upper bound, -1 below its lower bound and 0
otherwise, so any starting basis (including a warm one) can be used. The
explicit basis inverse is updated by a rank-one pivot and refactorized every
`refactor_every` iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AT_LOWER, AT_UPPER, FREE, BASIC = 0, 1, 2, 3


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit | numerical
    z: np.ndarray
    y: np.ndarray  # min-form duals: c_B B^-1 (phase-1 costs when infeasible)
    basis: np.ndarray
    state: np.ndarray
    iterations: int
    infeasibility: float = 0.0


def _nonbasic_value(j, st, lo, hi):
    if st == AT_LOWER:
        return lo[j]
    if st == AT_UPPER:
        return hi[j]
    return 0.0


def _initial_state(lo, hi):
    st = np.full(len(lo), FREE, dtype=np.int8)
    st[np.isfinite(lo)] = AT_LOWER
    st[~np.isfinite(lo) & np.isfinite(hi)] = AT_UPPER
    return st


def solve(A: np.ndarray, b: np.ndarray, c: np.ndarray, lo: np.ndarray, hi: np.ndarray, *,
          feas_tol=1e-7, opt_tol=1e-9, pivot_tol=1e-9, max_iter=50_000, stall_threshold=50,
          refactor_every=50, warm=None) -> SimplexResult:
    """A: m x N with the logical columns already appended; warm = (basis, state)."""
    m, N = A.shape
    c = np.asarray(c, dtype=float)

    basis = None
    if warm is not None:
        wb, ws = warm
        if len(wb) == m and len(ws) == N:
            basis = np.array(wb, dtype=np.int64)
            state = np.array(ws, dtype=np.int8)
            try:
                Binv = np.linalg.inv(A[:, basis])
            except np.linalg.LinAlgError:
                basis = None
            else:
                if not np.all(np.isfinite(Binv)):
                    basis = None
    if basis is None:
        basis = np.arange(N - m, N, dtype=np.int64)
        state = _initial_state(lo, hi)
        state[basis] = BASIC
        Binv = np.eye(m)
    else:
        # nonbasic positions must refer to bounds that still exist
        for j in np.flatnonzero(state != BASIC):
            if state[j] == AT_LOWER and not math.isfinite(lo[j]):
                state[j] = AT_UPPER if math.isfinite(hi[j]) else FREE
            elif state[j] == AT_UPPER and not math.isfinite(hi[j]):
                state[j] = AT_LOWER if math.isfinite(lo[j]) else FREE
            elif state[j] == FREE and (math.isfinite(lo[j]) or math.isfinite(hi[j])):
                state[j] = AT_LOWER if math.isfinite(lo[j]) else AT_UPPER

    z = np.zeros(N)

    def recompute():
        nb = np.flatnonzero(state != BASIC)
        z[nb] = [_nonbasic_value(j, state[j], lo, hi) for j in nb]
        z[basis] = Binv @ (b - A[:, nb] @ z[nb])

    recompute()
    lo_b = lo[basis]
    hi_b = hi[basis]
    it = 0
    since_refactor = 0
    stall = 0
    bland = False
    phase = 0
    y = np.zeros(m)

    while True:
        xb = z[basis]
        below = xb < lo_b - feas_tol
        above = xb > hi_b + feas_tol
        infeasible = bool(below.any() or above.any())
        new_phase = 1 if infeasible else 2
        if new_phase != phase:
            phase = new_phase
            stall = 0
            bland = False
        if phase == 1:
            cb = above.astype(float) - below.astype(float)
            cost = np.zeros(N)
        else:
            cb = c[basis]
            cost = c
        y = cb @ Binv
        d = cost - y @ A
        d[basis] = 0.0

        eligible = ((state == AT_LOWER) & (d < -opt_tol) & (hi > lo)) | \
                   ((state == AT_UPPER) & (d > opt_tol) & (hi > lo)) | \
                   ((state == FREE) & (np.abs(d) > opt_tol))
        cand = np.flatnonzero(eligible)
        if cand.size == 0:
            if phase == 1:
                infeas = float(np.sum(np.maximum(lo_b - xb, 0)) + np.sum(np.maximum(xb - hi_b, 0)))
                return SimplexResult("infeasible", z, y, basis, state, it, infeas)
            return SimplexResult("optimal", z, y, basis, state, it)
        if it >= max_iter:
            return SimplexResult("iteration_limit", z, y, basis, state, it)
        it += 1

        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmax(np.abs(d[cand]))])
        direction = 1.0 if d[j] < 0 else -1.0
        w = Binv @ A[:, j]
        rate = -direction * w  # d x_B / d step

        # ratio test
        step = math.inf
        leave = -1
        leave_to = AT_LOWER
        if math.isfinite(lo[j]) and math.isfinite(hi[j]):
            step = hi[j] - lo[j]
        movers = np.flatnonzero(np.abs(rate) > pivot_tol)
        best_rate = 0.0
        for i in movers:
            r = rate[i]
            x = xb[i]
            l_, h_ = lo_b[i], hi_b[i]
            if x < l_ - feas_tol:
                if r > 0:
                    lim, to = (l_ - x) / r, AT_LOWER
                else:
                    continue
            elif x > h_ + feas_tol:
                if r < 0:
                    lim, to = (h_ - x) / r, AT_UPPER
                else:
                    continue
            elif r > 0:
                if not math.isfinite(h_):
                    continue
                lim, to = max(h_ - x, 0.0) / r, AT_UPPER
            else:
                if not math.isfinite(l_):
                    continue
                lim, to = max(x - l_, 0.0) / -r, AT_LOWER
            if lim < step - 1e-12:
                better = True
            elif lim <= step + 1e-12 and leave >= 0:
                if bland:
                    better = basis[i] < basis[leave]
                else:
                    better = abs(r) > best_rate * (1 + 1e-9) or (
                        abs(r) >= best_rate * (1 - 1e-9) and basis[i] < basis[leave])
            else:
                better = False
            if better:
                step, leave, leave_to, best_rate = lim, int(i), to, abs(r)

        if not math.isfinite(step):
            if phase == 2:
                return SimplexResult("unbounded", z, y, basis, state, it)
            return SimplexResult("numerical", z, y, basis, state, it)

        if step <= 1e-12:
            stall += 1
            if stall > stall_threshold:
                bland = True
        else:
            stall = 0
            bland = False

        z[basis] += step * rate
        z[j] += direction * step
        if leave < 0:
            state[j] = AT_UPPER if direction > 0 else AT_LOWER
            z[j] = hi[j] if direction > 0 else lo[j]
            continue

        out = basis[leave]
        state[out] = leave_to
        z[out] = lo[out] if leave_to == AT_LOWER else hi[out]
        basis[leave] = j
        state[j] = BASIC
        lo_b[leave] = lo[j]
        hi_b[leave] = hi[j]
        piv = w[leave]
        row = Binv[leave] / piv
        Binv -= np.outer(w, row)
        Binv[leave] = row
        since_refactor += 1
        if since_refactor >= refactor_every:
            since_refactor = 0
            try:
                Binv = np.linalg.inv(A[:, basis])
            except np.linalg.LinAlgError:
                return SimplexResult("numerical", z, y, basis, state, it)
            recompute()
