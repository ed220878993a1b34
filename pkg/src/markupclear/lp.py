"""Linear programming with dual extraction.

`solve_lp` ignores integrality marks and returns primal values, row duals and
reduced costs. Duals are reported as d(objective)/d(rhs) of the maximization,
so the dual of a node-balance row is the nodal price.

Two engines sit behind the same contract:

* ``simplex``: the in-house dense bounded primal simplex (exact basis duals,
  Farkas ray from phase 1, warm start from a previous basis, Dantzig pricing
  with a Bland fallback after `stall_threshold` degenerate pivots);
* ``highs``: HiGHS dual simplex through scipy, for instances above
  `dense_limit` matrix entries. Its infeasibility certificate comes from an
  auxiliary phase-1 LP.

With ``method="auto"`` the choice depends only on the instance size, so a
given instance always goes to the same engine.

Under degeneracy the duals are those of the final basis and are not unique.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _simplex
from .formulation import ProblemInstance


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class LpParams:
    feas_tol: float = 1e-7
    duality_tol: float = 1e-6
    pivot_tol: float = 1e-9
    opt_tol: float = 1e-9
    max_iter: int = 200_000
    stall_threshold: int = 50
    refactor_every: int = 50
    method: str = "auto"
    dense_limit: int = 1_500_000


DEFAULT_PARAMS = LpParams()


class LpError(RuntimeError):
    pass


@dataclass
class LpSolution:
    status: LpStatus
    instance: ProblemInstance
    primal: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    farkas: Optional[np.ndarray] = None
    basis: Optional[tuple] = None
    iterations: int = 0
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    def value(self, name) -> float:
        return float(self.primal[self.instance.column(name)])


def _slack_bounds(senses):
    lo = np.where(senses == ">", -np.inf, 0.0)
    hi = np.where(senses == "<", np.inf, 0.0)
    return lo, hi


def choose_method(inst: ProblemInstance, params: LpParams = DEFAULT_PARAMS) -> str:
    if params.method != "auto":
        return params.method
    m, n = inst.n_rows, inst.n_vars
    return "simplex" if m * (n + m) <= params.dense_limit else "highs"


def solve_lp(inst: ProblemInstance, params: LpParams = DEFAULT_PARAMS, warm_basis=None) -> LpSolution:
    method = choose_method(inst, params)
    if method == "simplex":
        return _solve_simplex(inst, params, warm_basis)
    if method == "highs":
        return _solve_highs(inst, params)
    raise ValueError(f"unknown LP method {method!r}")


def _finish(inst, x, y, status, params, **kw) -> LpSolution:
    c = inst.objective
    rc = c - inst.A.T @ y
    sol = LpSolution(status=status, instance=inst, primal=x, objective=float(c @ x), duals=y,
                     reduced_costs=np.asarray(rc), **kw)
    return sol


def _solve_simplex(inst, params, warm_basis) -> LpSolution:
    m, n = inst.n_rows, inst.n_vars
    if m * (n + m) > params.dense_limit:
        raise LpError(f"instance too large for the dense simplex ({m} rows, {n} columns)")
    A = np.hstack([inst.dense, np.eye(m)])
    slo, shi = _slack_bounds(inst.senses)
    lo = np.concatenate([inst.lb, slo])
    hi = np.concatenate([inst.ub, shi])
    cost = np.concatenate([-inst.objective, np.zeros(m)])
    res = _simplex.solve(A, inst.rhs.astype(float), cost, lo, hi, feas_tol=params.feas_tol,
                         opt_tol=params.opt_tol, pivot_tol=params.pivot_tol, max_iter=params.max_iter,
                         stall_threshold=params.stall_threshold, refactor_every=params.refactor_every,
                         warm=warm_basis)
    basis = (res.basis.copy(), res.state.copy())
    if res.status == "optimal":
        return _finish(inst, res.z[:n].copy(), -res.y, LpStatus.OPTIMAL, params,
                       basis=basis, iterations=res.iterations, method="simplex")
    if res.status == "infeasible":
        return LpSolution(LpStatus.INFEASIBLE, inst, farkas=-res.y, basis=basis, iterations=res.iterations,
                          method="simplex", diagnostics={"infeasibility": res.infeasibility})
    status = {"unbounded": LpStatus.UNBOUNDED, "iteration_limit": LpStatus.ITERATION_LIMIT}.get(
        res.status, LpStatus.NUMERICAL)
    return LpSolution(status, inst, primal=res.z[:n].copy(), basis=basis, iterations=res.iterations,
                      method="simplex")


def _split_rows(inst):
    A = inst.A
    le = np.flatnonzero(inst.senses == "<")
    ge = np.flatnonzero(inst.senses == ">")
    eq = np.flatnonzero(inst.senses == "=")
    ub_rows = np.concatenate([le, ge])
    sign = np.concatenate([np.ones(len(le)), -np.ones(len(ge))])
    A_ub = sp.diags(sign) @ A[ub_rows] if len(ub_rows) else None
    b_ub = sign * inst.rhs[ub_rows] if len(ub_rows) else None
    A_eq = A[eq] if len(eq) else None
    b_eq = inst.rhs[eq] if len(eq) else None
    return ub_rows, sign, eq, A_ub, b_ub, A_eq, b_eq


def _highs_options(params):
    return {"presolve": True, "primal_feasibility_tolerance": params.feas_tol,
            "dual_feasibility_tolerance": params.opt_tol * 10}


def _solve_highs(inst, params) -> LpSolution:
    ub_rows, sign, eq, A_ub, b_ub, A_eq, b_eq = _split_rows(inst)
    bounds = np.column_stack([inst.lb, inst.ub])
    res = linprog(-inst.objective, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds", options=_highs_options(params))
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        y = np.zeros(inst.n_rows)
        if len(ub_rows):
            y[ub_rows] = -sign * res.ineqlin.marginals
        if len(eq):
            y[eq] = -res.eqlin.marginals
        return _finish(inst, np.asarray(res.x, dtype=float), y, LpStatus.OPTIMAL, params,
                       iterations=iters, method="highs")
    if res.status == 2:
        ray = highs_farkas(inst, params)
        if ray is None:
            # dual simplex may flag a primal-unbounded LP as infeasible
            return LpSolution(LpStatus.UNBOUNDED, inst, iterations=iters, method="highs")
        return LpSolution(LpStatus.INFEASIBLE, inst, farkas=ray, iterations=iters, method="highs",
                          diagnostics={"message": res.message})
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, inst, iterations=iters, method="highs")
    if res.status == 1:
        return LpSolution(LpStatus.ITERATION_LIMIT, inst, iterations=iters, method="highs")
    return LpSolution(LpStatus.NUMERICAL, inst, iterations=iters, method="highs",
                      diagnostics={"message": res.message})


def highs_farkas(inst: ProblemInstance, params: LpParams = DEFAULT_PARAMS) -> Optional[np.ndarray]:
    """Certificate from the phase-1 LP  min sum(p + q)  s.t.  A x + s + p - q = b."""
    m, n = inst.n_rows, inst.n_vars
    slo, shi = _slack_bounds(inst.senses)
    I = sp.identity(m, format="csr")
    M = sp.hstack([inst.A, I, I, -I], format="csr")
    cost = np.concatenate([np.zeros(n + m), np.ones(2 * m)])
    bounds = np.column_stack([
        np.concatenate([inst.lb, slo, np.zeros(2 * m)]),
        np.concatenate([inst.ub, shi, np.full(2 * m, np.inf)]),
    ])
    res = linprog(cost, A_eq=M, b_eq=inst.rhs, bounds=bounds, method="highs-ds",
                  options=_highs_options(params))
    if res.status != 0 or res.fun <= params.feas_tol:
        return None
    return -np.asarray(res.eqlin.marginals, dtype=float)


# -- certificates and checks --------------------------------------------------


def farkas_margin(inst: ProblemInstance, ray: np.ndarray, tol: float = 1e-9) -> float:
    """min over the bound box of ray.(A x) minus ray.b; positive proves infeasibility.

    The ray must be >= 0 on '<' rows and <= 0 on '>' rows (within `tol`),
    otherwise -inf is returned.
    """
    ray = np.asarray(ray, dtype=float)
    scale = max(1.0, float(np.abs(ray).max(initial=0.0)))
    if np.any(ray[inst.senses == "<"] < -tol * scale) or np.any(ray[inst.senses == ">"] > tol * scale):
        return -math.inf
    g = inst.A.T @ ray
    total = 0.0
    for j, gj in enumerate(g):
        if abs(gj) <= tol * scale:
            continue
        bound = inst.lb[j] if gj > 0 else inst.ub[j]
        if not math.isfinite(bound):
            return -math.inf
        total += gj * bound
    return float(total - ray @ inst.rhs)


def kkt_residuals(sol: LpSolution) -> dict:
    """Primal feasibility, dual sign feasibility, duality gap and complementary slackness.

    Values are absolute; `scale` is 1 + |objective| + max |dual| for relative checks.
    """
    inst = sol.instance
    x, y, rc = sol.primal, sol.duals, sol.reduced_costs
    act = inst.A @ x
    slack = inst.rhs - act
    primal = inst.max_violation(x)
    scale = 1.0 + abs(sol.objective) + float(np.abs(y).max(initial=0.0))

    le, ge = inst.senses == "<", inst.senses == ">"
    dual_sign = float(max(np.maximum(-y[le], 0).max(initial=0.0), np.maximum(y[ge], 0).max(initial=0.0)))
    # reduced costs: rc <= 0 when x can still increase, rc >= 0 when it can decrease
    room_up = inst.ub - x
    room_dn = x - inst.lb
    rc_viol = np.zeros_like(rc)
    rc_viol = np.where(room_up > 1e-7, np.maximum(rc, 0), rc_viol)
    rc_viol = np.maximum(rc_viol, np.where(room_dn > 1e-7, np.maximum(-rc, 0), 0))

    row_cs = float(np.abs(y * np.where(inst.senses == "=", 0.0, slack)).max(initial=0.0))
    dist = np.minimum(np.where(np.isfinite(room_up), np.abs(room_up), np.inf),
                      np.where(np.isfinite(room_dn), np.abs(room_dn), np.inf))
    dist = np.where(np.isfinite(dist), dist, np.abs(x) + 1.0)
    col_cs = float(np.abs(rc * dist).max(initial=0.0))

    bound_at = np.where(rc > 0, inst.ub, np.where(rc < 0, inst.lb, 0.0))
    bound_at = np.where(np.isfinite(bound_at), bound_at, x)
    dual_obj = float(y @ inst.rhs + rc @ bound_at)
    return {
        "primal": primal,
        "dual_sign": dual_sign,
        "reduced_cost_sign": float(rc_viol.max(initial=0.0)),
        "gap": abs(sol.objective - dual_obj),
        "dual_objective": dual_obj,
        "row_cs": row_cs,
        "col_cs": col_cs,
        "scale": scale,
    }


def check_optimality(sol: LpSolution, params: LpParams = DEFAULT_PARAMS) -> list[str]:
    """Names of the violated optimality conditions (empty when the solution certifies itself)."""
    r = kkt_residuals(sol)
    rel = 1e-6 * r["scale"]
    bad = []
    if r["primal"] > max(params.feas_tol, 1e-9 * r["scale"]) * 10:
        bad.append("primal")
    if r["dual_sign"] > rel:
        bad.append("dual_sign")
    if r["reduced_cost_sign"] > rel:
        bad.append("reduced_cost_sign")
    if r["gap"] > params.duality_tol * (1 + abs(sol.objective)):
        bad.append("gap")
    if r["row_cs"] > rel or r["col_cs"] > rel:
        bad.append("complementary_slackness")
    return bad


def duals_by_tag(sol: LpSolution, family: str = "node-balance") -> dict:
    """Row duals of one constraint family keyed by the tag indices, in row order.

    For node-balance this is the nodal price per (node, period).
    """
    if sol.status != LpStatus.OPTIMAL:
        raise LpError(f"no duals for a {sol.status.value} solution")
    inst = sol.instance
    return {inst.tags[i][1:]: float(sol.duals[i]) for i in inst.rows_of(family)}


def optimal_face(sol: LpSolution, objective: np.ndarray, tol: float = 1e-7) -> ProblemInstance:
    """The set of optimal solutions of `sol`'s LP, with a new objective.

    By complementary slackness with the dual of `sol`, a feasible point is
    optimal exactly when every column with a nonzero reduced cost sits at
    its current bound and every inequality row with a nonzero dual is tight.
    Used to break ties between optimal vertices by a secondary objective.
    """
    if sol.status != LpStatus.OPTIMAL:
        raise LpError(f"no optimal face for a {sol.status.value} solution")
    inst = sol.instance
    scale = 1.0 + float(np.abs(sol.duals).max(initial=0.0))
    lb, ub = inst.lb.copy(), inst.ub.copy()
    fix = np.flatnonzero(np.abs(sol.reduced_costs) > tol * scale)
    lb[fix] = ub[fix] = sol.primal[fix]
    senses = inst.senses.copy()
    senses[(senses != "=") & (np.abs(sol.duals) > tol * scale)] = "="
    return ProblemInstance(index=inst.index, objective=np.array(objective, dtype=float), lb=lb, ub=ub,
                           integrality=inst.integrality.copy(), A=inst.A, senses=senses,
                           rhs=inst.rhs.copy(), tags=inst.tags, meta={**inst.meta, "face_of": inst.meta.get("kind")})
