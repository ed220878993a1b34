"""Branch-and-bound over the binary columns of a ProblemInstance.

Best-bound node selection, most-fractional branching (lowest column on ties,
down branch first) and warm starts from the parent's final basis. There are no
cuts and no primal heuristics, so the search order is fully determined by the
instance and the configuration.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .formulation import CONTINUOUS, ProblemInstance
from .lp import DEFAULT_PARAMS, LpParams, LpSolution, LpStatus, solve_lp

INT_TOL = 1e-6


class MilpStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"  # stopped by a limit with an incumbent
    INFEASIBLE = "infeasible"
    LIMIT_REACHED = "limit_reached"  # stopped by a limit before any incumbent


class MilpError(RuntimeError):
    pass


@dataclass(frozen=True)
class MilpConfig:
    gap_tol: float = 1e-6
    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    int_tol: float = INT_TOL
    lp: LpParams = DEFAULT_PARAMS
    warm_start: bool = True
    keep_trace: bool = False


@dataclass
class MilpSolution:
    status: MilpStatus
    instance: ProblemInstance
    primal: Optional[np.ndarray] = None
    objective: float = -math.inf
    bound: float = math.inf
    nodes: int = 0
    runtime: float = 0.0
    lp_iterations: int = 0
    lp: Optional[LpSolution] = None  # LP with the incumbent's binaries fixed
    trace: list = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return self.primal is not None

    @property
    def gap(self) -> float:
        if not self.has_incumbent:
            return math.inf
        return max(0.0, (self.bound - self.objective) / max(1.0, abs(self.objective)))

    def value(self, name) -> float:
        return float(self.primal[self.instance.column(name)])


def fix_binaries(inst: ProblemInstance, assignment) -> ProblemInstance:
    """Pure LP with every binary column fixed to its 0/1 value.

    `assignment` is either a mapping from variable names to 0/1 (it must
    cover every binary) or a full-length vector read at the binary columns.
    """
    cols = inst.binaries
    if isinstance(assignment, Mapping):
        vals = np.empty(len(cols))
        for k, j in enumerate(cols):
            name = inst.index.name(j)
            if name not in assignment:
                raise ValueError(f"no value for binary {name!r}")
            vals[k] = assignment[name]
        unknown = [n for n in assignment if n not in inst.index]
        if unknown:
            raise KeyError(f"unknown variables {unknown[:5]}")
    else:
        vals = np.asarray(assignment, dtype=float)
        if vals.shape != (inst.n_vars,):
            raise ValueError(f"assignment has shape {vals.shape}, expected ({inst.n_vars},)")
        vals = vals[cols]
    bad = [inst.index.name(j) for j, v in zip(cols, vals) if v not in (0.0, 1.0)]
    if bad:
        raise ValueError(f"non-binary values for {bad[:5]}")
    lb, ub = inst.lb.copy(), inst.ub.copy()
    lb[cols] = ub[cols] = vals
    integ = inst.integrality.copy()
    integ[cols] = CONTINUOUS
    return inst.replace_bounds(lb, ub, integ, fixed_binaries=True)


def snap_binaries(inst: ProblemInstance, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float)
    cols = inst.binaries
    x[cols] = np.round(x[cols])
    return x


def _node_instance(inst, cols, blo, bhi):
    lb, ub = inst.lb.copy(), inst.ub.copy()
    lb[cols] = blo
    ub[cols] = bhi
    return inst.replace_bounds(lb, ub)


def solve_milp(inst: ProblemInstance, config: MilpConfig = MilpConfig()) -> MilpSolution:
    start = time.perf_counter()
    cols = inst.binaries
    out = MilpSolution(MilpStatus.INFEASIBLE, inst)
    lp_iters = 0
    best_x = None
    best_obj = -math.inf
    best_lp = None

    def gap_closed(bound):
        return best_x is not None and bound - best_obj <= config.gap_tol * max(1.0, abs(best_obj))

    # heap entries: (-parent bound, node id, binary lower bounds, binary upper bounds, warm basis)
    heap = [(-math.inf, 0, inst.lb[cols].copy(), inst.ub[cols].copy(), None, math.inf)]
    next_id = 1
    nodes = 0
    limit_hit = False

    while heap:
        top_bound = -heap[0][0]
        if gap_closed(top_bound):
            break
        if config.node_limit is not None and nodes >= config.node_limit:
            limit_hit = True
            break
        if config.time_limit is not None and time.perf_counter() - start > config.time_limit:
            limit_hit = True
            break
        _, nid, blo, bhi, warm, parent_bound = heapq.heappop(heap)
        nodes += 1
        node = _node_instance(inst, cols, blo, bhi)
        sol = solve_lp(node, config.lp, warm_basis=warm if config.warm_start else None)
        lp_iters += sol.iterations
        if sol.status == LpStatus.UNBOUNDED:
            raise MilpError("LP relaxation is unbounded")
        if sol.status != LpStatus.OPTIMAL:
            if sol.status != LpStatus.INFEASIBLE:
                raise MilpError(f"node LP ended with status {sol.status.value}")
            if config.keep_trace:
                out.trace.append({"node": nid, "parent_bound": parent_bound, "bound": -math.inf,
                                  "incumbent": best_obj})
            continue
        bound = sol.objective
        if config.keep_trace:
            out.trace.append({"node": nid, "parent_bound": parent_bound, "bound": bound, "incumbent": best_obj})
        if gap_closed(bound):
            continue

        vals = sol.primal[cols]
        frac = np.minimum(vals - np.floor(vals), np.ceil(vals) - vals)
        k = int(np.argmax(frac)) if len(cols) else 0
        if not len(cols) or frac[k] <= config.int_tol:
            # integral: re-solve with the binaries pinned for a clean incumbent
            fixed = _node_instance(inst, cols, np.round(vals), np.round(vals))
            fsol = solve_lp(fixed, config.lp, warm_basis=sol.basis if config.warm_start else None)
            lp_iters += fsol.iterations
            if fsol.status == LpStatus.OPTIMAL and fsol.objective > best_obj:
                best_obj = fsol.objective
                best_x = snap_binaries(inst, fsol.primal)
                best_lp = fsol
            continue

        v = vals[k]
        down_hi = bhi.copy()
        down_hi[k] = math.floor(v)
        up_lo = blo.copy()
        up_lo[k] = math.ceil(v)
        heapq.heappush(heap, (-bound, next_id, blo, down_hi, sol.basis, bound))
        heapq.heappush(heap, (-bound, next_id + 1, up_lo, bhi, sol.basis, bound))
        next_id += 2

    open_bound = max((-h[0] for h in heap), default=-math.inf)
    out.nodes = nodes
    out.lp_iterations = lp_iters
    out.runtime = time.perf_counter() - start
    if best_x is not None:
        out.primal, out.objective, out.lp = best_x, best_obj, best_lp
        out.bound = max(open_bound, best_obj)
        out.status = MilpStatus.FEASIBLE if limit_hit else MilpStatus.OPTIMAL
    elif limit_hit:
        out.bound = open_bound
        out.status = MilpStatus.LIMIT_REACHED
    else:
        out.bound = -math.inf
        out.status = MilpStatus.INFEASIBLE
    return out
