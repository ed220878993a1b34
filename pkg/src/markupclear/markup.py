"""The markup mechanism.

Phase 1 solves the convexified scaled problem (commitments relaxed, buyer
values divided by 1 + alpha) and keeps its allocation and node-balance duals.
Phase 2 turns the fractional commitments into 0/1 values, either by a
threshold delta or by a small MILP over the fractional ones, and re-clears
the rest. The smallest alpha whose budget covers the sellers' make-whole
payments wins.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .bb import INT_TOL, MilpConfig, MilpStatus, solve_milp
from .formulation import ClearingOptions, build_cswmp, build_rc_delta, build_rc_milp
from .lp import DEFAULT_PARAMS, LpParams, LpSolution, LpStatus, duals_by_tag, optimal_face, solve_lp
from .metrics import Allocation, budget_terms, seller_mwps, welfare
from .scenario import Scenario

log = logging.getLogger("markupclear")

DEFAULT_ALPHAS = (0.0, 0.01, 0.1, 0.2, 0.5)
DEFAULT_DELTAS = (0.01, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)
THRESHOLD = "threshold"
MILP = "milp"


def _event(name: str, /, **fields):
    log.info(name, extra={"event": name, "fields": fields})


class InfeasibleClearing(RuntimeError):
    """A clearing problem of the mechanism has no feasible point."""

    def __init__(self, message: str, stage: str, alpha: Optional[float] = None, detail: Optional[dict] = None):
        super().__init__(message)
        self.stage = stage
        self.alpha = alpha
        self.detail = detail or {}


class NoFeasibleMarkup(RuntimeError):
    """No candidate markup satisfied the budget condition."""

    def __init__(self, message: str, diagnostics: list):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Pseudoequilibrium:
    alpha: float
    allocation: Allocation
    prices: dict  # (node, period) -> seller price
    integral_set: frozenset  # (seller, period) pairs with integral u
    lp: LpSolution
    options: ClearingOptions

    @property
    def u(self) -> dict:
        return dict(self.allocation.u)

    @property
    def fractional(self) -> dict:
        return {k: v for k, v in self.allocation.u.items() if k not in self.integral_set}


def integral_set(u: Mapping, tol: float = INT_TOL) -> frozenset:
    return frozenset(k for k, v in u.items() if min(v, 1.0 - v) <= tol)


def free_commitments(s: Scenario) -> list:
    """(seller, period) pairs whose commitment constrains nothing and costs nothing.

    With pmin = 0, no no-load cost and no uptime rule, u = 1 is always feasible
    and leaves the objective unchanged, so phase 1 reports these as committed.
    """
    return [(sl.id, t) for sl in s.sellers if sl.no_load == 0 and sl.min_uptime == 0
            for t in s.periods if sl.pmin[t - 1] == 0]


def solve_phase1(s: Scenario, opts: ClearingOptions, params: LpParams = DEFAULT_PARAMS,
                 tie_break: bool = True) -> Pseudoequilibrium:
    """Solve the convexified scaled problem at opts.alpha.

    When the optimum is not unique, `tie_break` picks among the optimal
    solutions one with the least total commitment, so the result does not
    depend on which vertex the LP engine stops at. Commitments listed by
    `free_commitments` are then set to 1. Prices always come from
    the first solve; any dual optimum pairs with any primal optimum.
    """
    inst = build_cswmp(s, opts)
    sol = solve_lp(inst, params)
    if sol.status == LpStatus.INFEASIBLE:
        raise InfeasibleClearing(
            f"convexified problem infeasible (balance={opts.balance}, auctioneer demand R={opts.auctioneer_demand:g}, "
            f"oversupply cap={opts.oversupply_cap}, alpha={opts.alpha:g})",
            "phase1", opts.alpha, {"balance": opts.balance, "auctioneer_demand": opts.auctioneer_demand,
                                   "oversupply_cap": opts.oversupply_cap})
    if sol.status != LpStatus.OPTIMAL:
        raise RuntimeError(f"convexified problem ended {sol.status.value}")
    x = sol.primal
    if tie_break:
        obj = np.zeros(inst.n_vars)
        obj[inst.index.family("u")] = -1.0
        face = solve_lp(optimal_face(sol, obj), params)
        if face.status == LpStatus.OPTIMAL:
            x = face.primal
        else:
            _event("phase1-tie-break-skipped", status=face.status.value)
    x = np.clip(x, inst.lb, inst.ub)
    x[[inst.column(("u",) + key) for key in free_commitments(s)]] = 1.0
    alloc = Allocation.from_vector(inst, x)
    prices = duals_by_tag(sol, "node-balance")
    return Pseudoequilibrium(opts.alpha, alloc, prices, integral_set(alloc.u), sol, opts)


def round_threshold(u, delta: float):
    """1 where u >= delta, else 0. Accepts a mapping or an array."""
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {delta}")
    if isinstance(u, Mapping):
        for v in u.values():
            if not (-INT_TOL <= v <= 1.0 + INT_TOL):
                raise ValueError(f"commitment {v} outside [0, 1]")
        return {k: (1 if v >= delta else 0) for k, v in u.items()}
    arr = np.asarray(u, dtype=float)
    if np.any(arr < -INT_TOL) or np.any(arr > 1.0 + INT_TOL):
        raise ValueError("commitments outside [0, 1]")
    return (arr >= delta).astype(int)


def allocation_distance(a: Allocation, b: Allocation) -> float:
    """Euclidean distance over the bid-block quantities x_btl and y_stl."""
    sq = sum((a.x_l[k] - b.x_l[k]) ** 2 for k in a.x_l)
    sq += sum((a.y_l[k] - b.y_l[k]) ** 2 for k in a.y_l)
    return math.sqrt(sq)


def residual_clear(s: Scenario, alpha: float, fixed_u: Mapping, opts: ClearingOptions = ClearingOptions(),
                   params: LpParams = DEFAULT_PARAMS) -> Allocation:
    """Re-clear the scaled problem with every commitment fixed."""
    inst = build_rc_delta(s, alpha, fixed_u, opts)
    sol = solve_lp(inst, params)
    if sol.status != LpStatus.OPTIMAL:
        raise InfeasibleClearing(f"residual clearing is {sol.status.value}", "rc-delta", alpha)
    return Allocation.from_vector(inst, np.clip(sol.primal, inst.lb, inst.ub))


@dataclass(frozen=True)
class DeltaTrial:
    delta: float
    pattern: tuple
    feasible: bool
    welfare: Optional[float]
    distance: Optional[float]


@dataclass(frozen=True)
class DeltaChoice:
    delta: float
    allocation: Allocation
    welfare: float
    trials: tuple


def search_delta(s: Scenario, alpha: float, phase1: Pseudoequilibrium, deltas: Sequence[float],
                 opts: Optional[ClearingOptions] = None, params: LpParams = DEFAULT_PARAMS,
                 jobs: int = 1) -> DeltaChoice:
    """Best threshold by unscaled welfare; ties go to the smallest delta."""
    if not deltas:
        raise ValueError("no threshold candidates")
    opts = phase1.options if opts is None else opts
    keys = sorted(phase1.allocation.u)
    patterns = {d: round_threshold(phase1.allocation.u, d) for d in deltas}
    unique = {}
    for d in deltas:
        unique.setdefault(tuple(patterns[d][k] for k in keys), patterns[d])

    def clear(item):
        pat, u = item
        try:
            return pat, residual_clear(s, alpha, u, opts, params)
        except InfeasibleClearing:
            return pat, None

    items = sorted(unique.items())
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(clear, items))
    else:
        results = dict(map(clear, items))

    trials = []
    best = None
    for d in sorted(deltas):
        pat = tuple(patterns[d][k] for k in keys)
        alloc = results[pat]
        if alloc is None:
            trials.append(DeltaTrial(d, pat, False, None, None))
            _event("delta-trial", alpha=alpha, delta=d, feasible=False)
            continue
        w = welfare(alloc, s)
        dist = allocation_distance(alloc, phase1.allocation)
        trials.append(DeltaTrial(d, pat, True, w, dist))
        _event("delta-trial", alpha=alpha, delta=d, feasible=True, welfare=w, distance=dist)
        if best is None or w > best[1] + 1e-9 * max(1.0, abs(w)):
            best = (d, w, alloc)
    if best is None:
        raise InfeasibleClearing(f"every threshold in {sorted(deltas)} gives an infeasible residual problem",
                                 "rc-delta", alpha, {"deltas": sorted(deltas)})
    return DeltaChoice(best[0], best[2], best[1], tuple(trials))


def milp_round(s: Scenario, alpha: float, phase1: Pseudoequilibrium, opts: Optional[ClearingOptions] = None,
               config: MilpConfig = MilpConfig()) -> Allocation:
    """Keep the integral commitments of phase 1 and branch on the fractional ones."""
    opts = phase1.options if opts is None else opts
    fixed = {k: int(round(phase1.allocation.u[k])) for k in phase1.integral_set}
    inst = build_rc_milp(s, alpha, fixed, opts)
    res = solve_milp(inst, config)
    if not res.has_incumbent:
        stage = "rc-milp" if res.status == MilpStatus.INFEASIBLE else "rc-milp-limit"
        raise InfeasibleClearing(f"residual MILP ended {res.status.value} without a solution", stage, alpha)
    _event("milp-round", alpha=alpha, status=res.status.value, nodes=res.nodes, gap=res.gap)
    return Allocation.from_vector(inst, np.clip(res.primal, inst.lb, inst.ub))


# -- the alpha scan ------------------------------------------------------------------


@dataclass(frozen=True)
class MarkupConfig:
    alphas: tuple = DEFAULT_ALPHAS
    rounding: str = THRESHOLD
    deltas: tuple = DEFAULT_DELTAS
    options: ClearingOptions = ClearingOptions()
    allow_alpha_ge_1: bool = False
    jobs: int = 1
    lp: LpParams = DEFAULT_PARAMS
    milp: MilpConfig = MilpConfig(gap_tol=1e-4)
    tie_break: bool = True

    def __post_init__(self):
        if not self.alphas:
            raise ValueError("empty markup candidate set")
        if list(self.alphas) != sorted(self.alphas) or len(set(self.alphas)) != len(self.alphas):
            raise ValueError("markup candidates must be strictly ascending")
        if self.alphas[0] < 0:
            raise ValueError("markups must be nonnegative")
        if not self.allow_alpha_ge_1 and self.alphas[-1] >= 1:
            raise ValueError("markups >= 1 need allow_alpha_ge_1")
        if self.rounding not in (THRESHOLD, MILP):
            raise ValueError(f"rounding must be {THRESHOLD!r} or {MILP!r}")
        if self.rounding == THRESHOLD:
            if not self.deltas:
                raise ValueError("threshold rounding needs delta candidates")
            for d in self.deltas:
                if not (0.0 < d <= 1.0):
                    raise ValueError(f"threshold {d} outside (0, 1]")


@dataclass
class AlphaRecord:
    alpha: float
    status: str  # accepted | budget | infeasible
    delta: Optional[float] = None
    welfare: Optional[float] = None
    surplus: Optional[float] = None
    mwps: Optional[float] = None
    budget_after_mwp: Optional[float] = None
    message: str = ""


@dataclass
class MarkupOutcome:
    allocation: Allocation
    prices: dict  # seller prices
    alpha: float
    delta: Optional[float]
    rounding: str
    welfare: float
    mwps: dict  # seller id -> payment
    budget: dict  # buyer_payments, seller_revenue, network_revenue, surplus, priced_demand
    phase1: Pseudoequilibrium
    scan: list
    timings: dict = field(default_factory=dict)

    @property
    def buyer_price_factor(self) -> float:
        return 1.0 + self.alpha

    @property
    def buyer_prices(self) -> dict:
        return {k: (1.0 + self.alpha) * p for k, p in self.prices.items()}

    @property
    def total_mwp(self) -> float:
        return float(sum(self.mwps.values()))

    @property
    def budget_deficit(self) -> float:
        return self.total_mwp - self.budget["surplus"]


def _budget_scale(b: dict, mwp_total: float) -> float:
    return 1.0 + abs(b["buyer_payments"]) + abs(b["seller_revenue"]) + abs(b["network_revenue"]) + mwp_total


def run_markup(s: Scenario, config: MarkupConfig = MarkupConfig()) -> MarkupOutcome:
    """Scan the markups in ascending order and return the first that balances the budget."""
    opts_base = config.options
    scan = []
    timings = {"phase1": 0.0, "phase2": 0.0, "pricing": 0.0}
    for alpha in config.alphas:
        opts = opts_base.with_alpha(alpha)
        t0 = time.perf_counter()
        try:
            p1 = solve_phase1(s, opts, config.lp, config.tie_break)
        except InfeasibleClearing as exc:
            timings["phase1"] += time.perf_counter() - t0
            scan.append(AlphaRecord(alpha, "infeasible", message=str(exc)))
            _event("alpha-infeasible", alpha=alpha, stage="phase1", message=str(exc))
            continue
        t1 = time.perf_counter()
        timings["phase1"] += t1 - t0
        _event("phase1", alpha=alpha, seconds=t1 - t0, fractional=len(p1.fractional))
        delta = None
        try:
            if config.rounding == THRESHOLD:
                choice = search_delta(s, alpha, p1, config.deltas, opts, config.lp, config.jobs)
                alloc, delta = choice.allocation, choice.delta
            else:
                alloc = milp_round(s, alpha, p1, opts, config.milp)
        except InfeasibleClearing as exc:
            timings["phase2"] += time.perf_counter() - t1
            scan.append(AlphaRecord(alpha, "infeasible", message=str(exc)))
            _event("alpha-infeasible", alpha=alpha, stage="phase2", message=str(exc))
            continue
        t2 = time.perf_counter()
        timings["phase2"] += t2 - t1

        mwps = seller_mwps(s, alloc, p1.prices)
        b = budget_terms(s, alloc, p1.prices, alpha)
        total = float(sum(mwps.values()))
        after = b["surplus"] - total
        if opts.balance == "strict":
            expect = alpha * b["priced_demand"]
            if abs(b["surplus"] - expect) > 1e-6 * _budget_scale(b, 0.0):
                raise AssertionError(f"budget identity broken at alpha={alpha}: {b['surplus']} vs {expect}")
        w = welfare(alloc, s)
        timings["pricing"] += time.perf_counter() - t2
        ok = after >= -1e-6 * _budget_scale(b, total)
        scan.append(AlphaRecord(alpha, "accepted" if ok else "budget", delta, w, b["surplus"], total, after))
        _event("alpha-scan", alpha=alpha, delta=delta, welfare=w, surplus=b["surplus"], mwps=total,
               budget_after_mwp=after, accepted=ok, seconds=t2 - t0)
        if ok:
            return MarkupOutcome(alloc, dict(p1.prices), alpha, delta, config.rounding, w, mwps, b, p1, scan, timings)
    raise NoFeasibleMarkup(f"no markup in {list(config.alphas)} covers the make-whole payments", scan)
