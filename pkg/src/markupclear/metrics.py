"""Allocations, prices and the outcome metrics of a clearing run.

Sign conventions: `prices` are the seller prices p per (node, period); buyers
pay (1 + alpha) p. The network's delivery into node v is
g_vt = sum_w f_wvt (flow from each neighbour w into v), and the transmission
operator is settled at seller prices. A positive budget deficit means the
auctioneer pays out more than it collects; a surplus is a negative deficit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from .bb import MilpConfig, MilpStatus, fix_binaries, solve_milp
from .formulation import BINARY, ClearingOptions, ProblemInstance, _Builder, build_dcopf_milp
from .lp import DEFAULT_PARAMS, LpParams, LpStatus, duals_by_tag, solve_lp
from .scenario import Buyer, Scenario, Seller

PRICE_TOL = 1e-5
SCHEMA_VERSION = 1


class PricingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Allocation:
    """Values of every model variable, keyed like the variable names without the family."""

    x_l: Mapping  # (b, t, l)
    x: Mapping  # (b, t)
    y_l: Mapping  # (s, t, l)
    y: Mapping  # (s, t)
    u: Mapping  # (s, t)
    phi: Mapping  # (s, t)
    theta: Mapping  # (v, t)
    f: Mapping  # (k, v, w, t), flow from v to w on line k
    sigma: Mapping  # (v, t); empty under strict balance

    _FAMILIES = {"xl": "x_l", "x": "x", "yl": "y_l", "y": "y", "u": "u", "phi": "phi",
                 "theta": "theta", "f": "f", "sigma": "sigma"}

    @classmethod
    def from_vector(cls, inst: ProblemInstance, values) -> "Allocation":
        parts = {attr: {} for attr in cls._FAMILIES.values()}
        for name, val in zip(inst.index, np.asarray(values, dtype=float)):
            parts[cls._FAMILIES[name[0]]][name[1:]] = float(val)
        for key, val in parts["u"].items():
            if abs(val - round(val)) <= 1e-6:
                parts["u"][key] = float(round(val))
        return cls(**parts)

    def delivery(self, s: Scenario) -> dict:
        """g_vt: net flow the network delivers into each node."""
        g = {(v, t): 0.0 for v in s.network.nodes for t in s.periods}
        for (k, v, w, t), val in self.f.items():
            g[(w, t)] += val
        return g

    def node_excess(self, s: Scenario) -> dict:
        """Supply plus network delivery minus demand, per node and period."""
        ex = dict(self.delivery(s))
        for sl in s.sellers:
            for t in s.periods:
                ex[(sl.node, t)] += self.y[(sl.id, t)]
        for b in s.buyers:
            for t in s.periods:
                ex[(b.node, t)] -= self.x[(b.id, t)]
        return ex

    def total_supply(self) -> float:
        return float(sum(self.y.values()))

    def total_demand(self) -> float:
        return float(sum(self.x.values()))

    def commitments(self) -> dict:
        return dict(self.u)


def welfare(a: Allocation, s: Scenario) -> float:
    """Elastic bid value minus generation cost minus no-load cost (unscaled)."""
    w = 0.0
    for b in s.buyers:
        for t in s.periods:
            for l, bid in enumerate(b.bids[t - 1]):
                w += bid.price * a.x_l[(b.id, t, l)]
    for sl in s.sellers:
        for t in s.periods:
            for l, bid in enumerate(sl.bids[t - 1]):
                w -= bid.price * a.y_l[(sl.id, t, l)]
            w -= sl.no_load * a.u[(sl.id, t)]
    return float(w)


def ip_prices(s: Scenario, opt: Allocation, opts: ClearingOptions = ClearingOptions(),
              params: LpParams = DEFAULT_PARAMS) -> dict:
    """Node-balance duals of the clearing LP with commitments fixed at `opt`."""
    inst = build_dcopf_milp(s, opts.with_alpha(0.0))
    assignment = {("u",) + key: round(val) for key, val in opt.u.items()}
    sol = solve_lp(fix_binaries(inst, assignment), params)
    if sol.status != LpStatus.OPTIMAL:
        raise PricingError(f"fixed-commitment LP is {sol.status.value}; the allocation is inconsistent")
    return duals_by_tag(sol, "node-balance")


def agent_utility(agent, a: Allocation, prices: Mapping, factor: float = 1.0) -> float:
    """Profit of a seller at p, or a buyer's value minus payment at factor * p."""
    T = len(agent.bids)
    if isinstance(agent, Seller):
        u = 0.0
        for t in range(1, T + 1):
            u += prices[(agent.node, t)] * a.y[(agent.id, t)]
            u -= sum(bid.price * a.y_l[(agent.id, t, l)] for l, bid in enumerate(agent.bids[t - 1]))
            u -= agent.no_load * a.u[(agent.id, t)]
        return float(u)
    if isinstance(agent, Buyer):
        u = 0.0
        for t in range(1, T + 1):
            u += sum(bid.price * a.x_l[(agent.id, t, l)] for l, bid in enumerate(agent.bids[t - 1]))
            u -= factor * prices[(agent.node, t)] * a.x[(agent.id, t)]
        return float(u)
    raise TypeError(f"not an agent: {agent!r}")


def mwp(utility: float) -> float:
    """Make-whole payment: what restores a nonnegative utility."""
    return max(0.0, -float(utility))


def _seller_best_response(sl: Seller, prices: Mapping) -> ProblemInstance:
    bld = _Builder()
    T = len(sl.bids)
    for t in range(1, T + 1):
        p = prices[(sl.node, t)]
        for l, bid in enumerate(sl.bids[t - 1]):
            bld.var(("yl", sl.id, t, l), 0.0, math.inf, p - bid.price)
        bld.var(("y", sl.id, t), 0.0, math.inf)
        bld.var(("u", sl.id, t), 0.0, 1.0, -sl.no_load, BINARY)
        if sl.min_uptime >= 1:
            bld.var(("phi", sl.id, t), 0.0, math.inf)
    col = bld.col
    for t in range(1, T + 1):
        u = col(("u", sl.id, t))
        y = col(("y", sl.id, t))
        bids = sl.bids[t - 1]
        for l, bid in enumerate(bids):
            bld.add_row([(col(("yl", sl.id, t, l)), 1.0), (u, -bid.q)], "<", 0.0, ("seller-block", sl.id, t, l))
        bld.add_row([(y, 1.0)] + [(col(("yl", sl.id, t, l)), -1.0) for l in range(len(bids))],
                    "=", 0.0, ("seller-agg", sl.id, t))
        bld.add_row([(y, 1.0), (u, -sl.pmax[t - 1])], "<", 0.0, ("seller-max", sl.id, t))
        bld.add_row([(y, 1.0), (u, -sl.pmin[t - 1])], ">", 0.0, ("seller-min", sl.id, t))
    if sl.min_uptime >= 1:
        for t in range(1, T + 1):
            terms = [(col(("phi", sl.id, t)), 1.0), (col(("u", sl.id, t)), -1.0)]
            if t > 1:
                terms.append((col(("u", sl.id, t - 1)), 1.0))
            bld.add_row(terms, ">", 0.0, ("startup", sl.id, t))
            first = max(1, t - sl.min_uptime + 1)
            terms = [(col(("phi", sl.id, i)), 1.0) for i in range(first, t + 1)]
            terms.append((col(("u", sl.id, t)), -1.0))
            bld.add_row(terms, "<", 0.0, ("uptime", sl.id, t))
    return bld.build({"kind": "seller-best-response", "agent": sl.id})


def best_utility(agent, prices: Mapping, factor: float = 1.0, config: MilpConfig = MilpConfig()) -> float:
    """The agent's maximal utility at the given prices over its own constraints."""
    if isinstance(agent, Seller):
        res = solve_milp(_seller_best_response(agent, prices), config)
        if res.status != MilpStatus.OPTIMAL:
            raise PricingError(f"best response of {agent.id} ended {res.status.value}")
        return float(res.objective)
    if isinstance(agent, Buyer):
        # separable per period: fill the most valuable blocks up to dmax
        total = 0.0
        for t, bids in enumerate(agent.bids, start=1):
            price = factor * prices[(agent.node, t)]
            room = agent.dmax[t - 1] - agent.inelastic[t - 1]
            total -= price * agent.inelastic[t - 1]
            for bid in sorted(bids, key=lambda b: -b.price):
                take = min(bid.q, room)
                if take <= 0 or bid.price <= price:
                    break
                total += (bid.price - price) * take
                room -= take
        return float(total)
    raise TypeError(f"not an agent: {agent!r}")


def gloc(agent, a: Allocation, prices: Mapping, factor: float = 1.0, config: MilpConfig = MilpConfig()) -> float:
    """Global lost opportunity cost: best achievable utility minus the realized one."""
    return best_utility(agent, prices, factor, config) - agent_utility(agent, a, prices, factor)


def rwl(w: float, w_opt: float) -> float:
    """Relative welfare loss in percent; the denominator is |W_opt| so a loss is positive."""
    if w_opt == 0:
        raise ZeroDivisionError("relative welfare loss is undefined for W_opt = 0")
    return 100.0 * (w_opt - w) / abs(w_opt)


def seller_mwps(s: Scenario, a: Allocation, prices: Mapping) -> dict:
    return {sl.id: mwp(agent_utility(sl, a, prices)) for sl in s.sellers}


def budget_terms(s: Scenario, a: Allocation, prices: Mapping, alpha: float) -> dict:
    """Buyer payments, seller revenue and transmission revenue at the given prices."""
    buyers = (1.0 + alpha) * sum(prices[(b.node, t)] * a.x[(b.id, t)] for b in s.buyers for t in s.periods)
    sellers = sum(prices[(sl.node, t)] * a.y[(sl.id, t)] for sl in s.sellers for t in s.periods)
    network = sum(prices[key] * g for key, g in a.delivery(s).items())
    base = sum(prices[(b.node, t)] * a.x[(b.id, t)] for b in s.buyers for t in s.periods)
    return {"buyer_payments": float(buyers), "seller_revenue": float(sellers),
            "network_revenue": float(network), "surplus": float(buyers - sellers - network),
            "priced_demand": float(base)}


def budget_and_oversupply(s: Scenario, a: Allocation, prices: Mapping, alpha: float,
                          mwps: Mapping) -> tuple[float, float]:
    """(budget deficit after make-whole payments, total oversupply)."""
    surplus = budget_terms(s, a, prices, alpha)["surplus"]
    deficit = float(sum(mwps.values())) - surplus
    oversupply = float(sum(a.node_excess(s).values()))
    return deficit, oversupply


def congestion_violations(s: Scenario, a: Allocation, prices: Mapping, price_tol: float = PRICE_TOL,
                          flow_tol: float = 1e-6) -> list:
    """Lines whose flow is strictly inside its limits yet whose end prices differ.

    Meaningful as a hard check on radial networks only.
    """
    out = []
    for k, ln in enumerate(s.network.lines):
        for t in s.periods:
            flows = (a.f[(k, ln.from_node, ln.to_node, t)], a.f[(k, ln.to_node, ln.from_node, t)])
            binding = any(f <= ln.fmin + flow_tol or f >= ln.fmax - flow_tol for f in flows)
            diff = abs(prices[(ln.from_node, t)] - prices[(ln.to_node, t)])
            if not binding and diff > price_tol:
                out.append((k, t, diff))
    return out


def check_allocation(s: Scenario, a: Allocation, balance: str, tol: float = 1e-6) -> list[str]:
    """Aggregation, balance and flow identities violated by `a`."""
    bad = []
    for b in s.buyers:
        for t in s.periods:
            agg = b.inelastic[t - 1] + sum(a.x_l[(b.id, t, l)] for l in range(len(b.bids[t - 1])))
            if abs(a.x[(b.id, t)] - agg) > tol:
                bad.append(f"buyer-agg {b.id} {t}")
    for sl in s.sellers:
        for t in s.periods:
            if abs(a.y[(sl.id, t)] - sum(a.y_l[(sl.id, t, l)] for l in range(len(sl.bids[t - 1])))) > tol:
                bad.append(f"seller-agg {sl.id} {t}")
    for key, ex in a.node_excess(s).items():
        if ex < -tol or (balance == "strict" and ex > tol):
            bad.append(f"balance {key}")
    for k, ln in enumerate(s.network.lines):
        for v, w in ((ln.from_node, ln.to_node), (ln.to_node, ln.from_node)):
            for t in s.periods:
                f = a.f[(k, v, w, t)]
                if abs(f - ln.susceptance * (a.theta[(v, t)] - a.theta[(w, t)])) > tol:
                    bad.append(f"flow-def {k} {v} {w} {t}")
    return bad


# -- report rows ----------------------------------------------------------------

COLUMNS = ("Algorithm", "S=D", "Welfare", "Supply", "Demand", "Oversupply", "MWPs", "Budget Deficit",
           "alpha", "delta", "RWL", "Time (s)")


@dataclass
class ClearingReport:
    algorithm: str  # OPT | Threshold | MILP Round | IP Price
    balance: str
    scenario: str = ""
    status: str = "ok"  # ok | infeasible | budget (no markup balanced) | limit
    welfare: Optional[float] = None
    supply: Optional[float] = None
    demand: Optional[float] = None
    oversupply: Optional[float] = None
    mwps: Optional[float] = None
    budget_deficit: Optional[float] = None
    alpha: Optional[float] = None
    delta: Optional[float] = None
    rwl: Optional[float] = None
    runtime: Optional[float] = None
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    _NUMERIC = ("welfare", "supply", "demand", "oversupply", "mwps", "budget_deficit", "alpha", "delta",
                "rwl", "runtime")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in self._NUMERIC:
            if d[key] is not None:
                d[key] = round(float(d[key]), 2 if key not in ("alpha", "delta") else 6)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClearingReport":
        version = int(d.get("schema_version", -1))
        if version != SCHEMA_VERSION:
            raise ValueError(f"report schema version {version} is not {SCHEMA_VERSION}")
        known = {f for f in cls.__dataclass_fields__}
        kw = {k: v for k, v in d.items() if k in known}
        for key in cls._NUMERIC:
            val = kw.get(key)
            kw[key] = None if val in (None, "") else float(val)
        timings = kw.get("timings") or {}
        kw["timings"] = dict(json.loads(timings) if isinstance(timings, str) else timings)
        kw["schema_version"] = version
        return cls(**kw)

    def table_cells(self) -> list[str]:
        """One Table-3 style row: 2 decimals, thousands separators, surplus in parentheses."""
        def money(v):
            return "" if v is None else f"{v:,.2f}"

        sd = "y" if self.balance == "strict" else "n"
        if self.status in ("infeasible", "budget"):
            return [self.algorithm, sd, "infeasible", "", "", "", "", "", _num(self.alpha), _num(self.delta), "", ""]
        if self.status == "limit" and self.welfare is None:
            return [self.algorithm, sd, "N/A", "", "", "", "", "", _num(self.alpha), _num(self.delta), "", ""]
        deficit = self.budget_deficit
        if deficit is None:
            budget = ""
        elif deficit < 0:
            budget = f"({-deficit:,.2f})"
        else:
            budget = money(deficit)
        rwl_cell = "-" if self.rwl is None else f"{self.rwl:.2f}%"
        if self.algorithm == "OPT":
            rwl_cell = ""
        return [self.algorithm, sd, money(self.welfare), money(self.supply), money(self.demand),
                money(self.oversupply), money(self.mwps), budget, _num(self.alpha), _num(self.delta),
                rwl_cell, "" if self.runtime is None else f"{self.runtime:,.2f}"]


def _num(v) -> str:
    return "" if v is None else f"{v:g}"


_CSV_FIELDS = ("schema_version", "scenario", "algorithm", "balance", "status", "welfare", "supply", "demand",
               "oversupply", "mwps", "budget_deficit", "alpha", "delta", "rwl", "runtime", "timings")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        d = r.to_dict()
        d["timings"] = json.dumps(d["timings"], sort_keys=True)
        w.writerow({k: ("" if d[k] is None else d[k]) for k in _CSV_FIELDS})
    return buf.getvalue()


def reports_from_csv(text: str) -> list:
    return [ClearingReport.from_dict(row) for row in csv.DictReader(io.StringIO(text))]


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [ClearingReport.from_dict(d) for d in data]
