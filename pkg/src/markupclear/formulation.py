"""Optimization problem instances built from scenarios.

Every builder produces a `ProblemInstance` (always a maximization) whose rows
follow the DC-OPF unit-commitment model:

    node-balance (v,t)   sum x_bt + sum_w f_vwt - sum y_st [+ sigma_vt] = -R
    flow-def (k,v,w,t)   f_vwt - B_vw (theta_vt - theta_wt)             = 0
    ref-angle (t)        theta_ref,t                                      = 0
    buyer-agg (b,t)      x_bt - sum_l x_btl                               = inelastic_bt
    seller-block (s,t,l) y_stl - q_stl u_st                              <= 0
    seller-agg (s,t)     y_st - sum_l y_stl                               = 0
    seller-max (s,t)     y_st - pmax_st u_st                             <= 0
    seller-min (s,t)     y_st - pmin_st u_st                             >= 0
    startup (s,t)        phi_st - u_st + u_s,t-1                         >= 0   (min_uptime >= 1)
    uptime (s,t)         sum_{i=max(1,t-R_s+1)}^t phi_si - u_st          <= 0   (min_uptime >= 1)
    oversupply-cap       sum sigma_vt - cap * sum x_bt                   <= 0   (weak mode, optional)

The balance row is written demand-minus-supply so that its dual is directly
the nodal price (marginal welfare of one more MWh available at the node).
Simple caps (x_btl <= q_btl, x_bt <= dmax_bt, flow limits, 0 <= u <= 1) are
variable bounds. Each line yields two directed flow variables, one per
direction, each with its own flow-def row and the line's [fmin, fmax] limits.
The commitment before period 1 is taken as off (u_s0 = 0).

Closed-form sizes, with E lines, V nodes, T periods, L_bt / L_st bid counts and
U the sellers with min_uptime >= 1:

    rows = V*T + 2*E*T + T + |B|*T + sum_{s,t} (L_st + 3) + 2*|U|*T [+ 1 cap]
    cols = sum_{b,t} (L_bt + 1) + sum_{s,t} (L_st + 2) + |U|*T + V*T + 2*E*T [+ V*T sigma]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp

from .scenario import Scenario, ScenarioValidationError, validate

STRICT = "strict"
WEAK = "weak"
_DEFAULT_CAP = object()
DEFAULT_OVERSUPPLY_CAP = 0.5

CONTINUOUS = 0
BINARY = 1


@dataclass(frozen=True)
class ClearingOptions:
    """Balance mode and perturbation settings shared by all builders.

    `oversupply_cap` defaults to 0.5 in weak mode (total excess supply at most
    half of the cleared demand); pass None to drop the cap.
    """

    balance: str = STRICT
    auctioneer_demand: float = 0.0
    oversupply_cap: object = _DEFAULT_CAP
    alpha: float = 0.0

    def __post_init__(self):
        if self.balance not in (STRICT, WEAK):
            raise ValueError(f"balance must be 'strict' or 'weak', got {self.balance!r}")
        if self.oversupply_cap is _DEFAULT_CAP:
            object.__setattr__(self, "oversupply_cap", DEFAULT_OVERSUPPLY_CAP if self.balance == WEAK else None)
        if self.auctioneer_demand < 0:
            raise ValueError("auctioneer demand must be nonnegative")
        if self.alpha < 0:
            raise ValueError("markup alpha must be nonnegative")
        if self.balance == STRICT:
            if self.auctioneer_demand > 0:
                raise ValueError("auctioneer demand requires weak balance")
            if self.oversupply_cap is not None:
                raise ValueError("an oversupply cap requires weak balance")
        elif self.oversupply_cap is not None and self.oversupply_cap < 0:
            raise ValueError("oversupply cap must be nonnegative")

    @property
    def weak(self) -> bool:
        return self.balance == WEAK

    def with_alpha(self, alpha: float) -> "ClearingOptions":
        return ClearingOptions(self.balance, self.auctioneer_demand, self.oversupply_cap, alpha)

    def without_auctioneer(self) -> "ClearingOptions":
        return ClearingOptions(self.balance, 0.0, self.oversupply_cap, self.alpha)


class VariableIndex:
    """Bijection between structured variable names and column indices.

    Names are tuples: ("xl", b, t, l), ("x", b, t), ("yl", s, t, l), ("y", s, t),
    ("u", s, t), ("phi", s, t), ("theta", v, t), ("f", k, v, w, t) for the flow
    from v to w on line k, and ("sigma", v, t).
    """

    def __init__(self, names):
        self._names = tuple(names)
        self._cols = {n: i for i, n in enumerate(self._names)}
        if len(self._cols) != len(self._names):
            raise ValueError("duplicate variable names")

    def column(self, name) -> int:
        try:
            return self._cols[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def name(self, col: int):
        if not 0 <= col < len(self._names):
            raise KeyError(f"no column {col}")
        return self._names[col]

    def get(self, name, default=None):
        return self._cols.get(name, default)

    def family(self, kind: str) -> list[int]:
        return [i for i, n in enumerate(self._names) if n[0] == kind]

    def __contains__(self, name) -> bool:
        return name in self._cols

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A maximization LP/MILP with sparse rows.

    senses holds one of '=', '<', '>' per row. Tags name each row by family
    (first tuple element) and indices.
    """

    index: VariableIndex
    objective: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    tags: tuple
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.objective, self.lb, self.ub, self.integrality, self.senses, self.rhs):
            arr.setflags(write=False)
        object.__setattr__(self, "_rows", {t: i for i, t in enumerate(self.tags)})

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.integrality == BINARY)

    def row(self, tag) -> int:
        try:
            return self._rows[tag]
        except KeyError:
            raise KeyError(f"no row tagged {tag!r}") from None

    def rows_of(self, family: str) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t[0] == family]

    def column(self, name) -> int:
        return self.index.column(name)

    @property
    def csc(self) -> sp.csc_matrix:
        cached = self.__dict__.get("_csc")
        if cached is None:
            cached = self.A.tocsc()
            object.__setattr__(self, "_csc", cached)
        return cached

    @property
    def dense(self) -> np.ndarray:
        """Dense copy of A, cached and shared with bound-replaced copies."""
        cached = self.__dict__.get("_dense")
        if cached is None:
            cached = self.A.toarray()
            cached.setflags(write=False)
            object.__setattr__(self, "_dense", cached)
        return cached

    def replace_bounds(self, lb=None, ub=None, integrality=None, **meta) -> "ProblemInstance":
        """Copy with new bounds/integrality marks; rows and objective are shared."""
        new = ProblemInstance(
            index=self.index,
            objective=self.objective,
            lb=np.array(self.lb if lb is None else lb, dtype=float),
            ub=np.array(self.ub if ub is None else ub, dtype=float),
            integrality=np.array(self.integrality if integrality is None else integrality, dtype=np.int8),
            A=self.A,
            senses=self.senses,
            rhs=self.rhs,
            tags=self.tags,
            meta={**self.meta, **meta},
        )
        for key in ("_csc", "_dense"):
            if key in self.__dict__:
                object.__setattr__(new, key, self.__dict__[key])
        return new

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x) -> float:
        """Largest row or bound violation of point x."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        viol = np.zeros_like(act)
        eq = self.senses == "="
        le = self.senses == "<"
        ge = self.senses == ">"
        viol[eq] = np.abs(act[eq] - self.rhs[eq])
        viol[le] = np.maximum(act[le] - self.rhs[le], 0)
        viol[ge] = np.maximum(self.rhs[ge] - act[ge], 0)
        bnd = np.maximum(np.maximum(self.lb - x, x - self.ub), 0)
        return float(max(viol.max(initial=0.0), bnd.max(initial=0.0)))


class _Builder:
    def __init__(self):
        self.names: list = []
        self.lb: list = []
        self.ub: list = []
        self.obj: list = []
        self.kind: list = []
        self._col: dict = {}
        self.rows_i: list = []
        self.rows_j: list = []
        self.rows_v: list = []
        self.senses: list = []
        self.rhs: list = []
        self.tags: list = []

    def var(self, name, lo=0.0, hi=math.inf, cost=0.0, kind=CONTINUOUS) -> int:
        j = len(self.names)
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        self.obj.append(cost)
        self.kind.append(kind)
        self._col[name] = j
        return j

    def col(self, name) -> int:
        return self._col[name]

    def add_row(self, terms, sense, rhs, tag):
        i = len(self.rhs)
        merged: dict = {}
        for j, v in terms:
            merged[j] = merged.get(j, 0.0) + v
        for j, v in merged.items():
            if v != 0.0:
                self.rows_i.append(i)
                self.rows_j.append(j)
                self.rows_v.append(v)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.tags.append(tag)

    def build(self, meta) -> ProblemInstance:
        A = sp.csr_matrix(
            (np.array(self.rows_v, dtype=float), (np.array(self.rows_i, dtype=np.int64), np.array(self.rows_j, dtype=np.int64))),
            shape=(len(self.rhs), len(self.names)),
        )
        A.sum_duplicates()
        return ProblemInstance(
            index=VariableIndex(self.names),
            objective=np.array(self.obj, dtype=float),
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            integrality=np.array(self.kind, dtype=np.int8),
            A=A,
            senses=np.array(self.senses, dtype="<U1"),
            rhs=np.array(self.rhs, dtype=float),
            tags=tuple(self.tags),
            meta=meta,
        )


def _check(s: Scenario):
    problems = validate(s)
    if problems:
        raise ScenarioValidationError(problems)


def _build(s: Scenario, opts: ClearingOptions, u_kind: int, fixed_u: Optional[Mapping] = None,
           kind: str = "dcopf") -> ProblemInstance:
    _check(s)
    scale = 1.0 / (1.0 + opts.alpha)
    net = s.network
    T = s.horizon
    bld = _Builder()

    for b in s.buyers:
        for t in s.periods:
            for l, bid in enumerate(b.bids[t - 1]):
                bld.var(("xl", b.id, t, l), 0.0, bid.q, bid.price * scale)
            bld.var(("x", b.id, t), 0.0, b.dmax[t - 1])
    for sl in s.sellers:
        for t in s.periods:
            for l, bid in enumerate(sl.bids[t - 1]):
                bld.var(("yl", sl.id, t, l), 0.0, math.inf, -bid.price)
            bld.var(("y", sl.id, t), 0.0, math.inf)
            lo, hi = 0.0, 1.0
            if fixed_u is not None and (sl.id, t) in fixed_u:
                lo = hi = float(fixed_u[(sl.id, t)])
                ukind = CONTINUOUS
            else:
                ukind = u_kind
            bld.var(("u", sl.id, t), lo, hi, -sl.no_load, ukind)
        if sl.min_uptime >= 1:
            for t in s.periods:
                bld.var(("phi", sl.id, t), 0.0, math.inf)
    for v in net.nodes:
        for t in s.periods:
            bld.var(("theta", v, t), -math.inf, math.inf)
    for k, ln in enumerate(net.lines):
        for a, c in ((ln.from_node, ln.to_node), (ln.to_node, ln.from_node)):
            for t in s.periods:
                bld.var(("f", k, a, c, t), ln.fmin, ln.fmax)
    if opts.weak:
        for v in net.nodes:
            for t in s.periods:
                bld.var(("sigma", v, t), 0.0, math.inf)

    col = bld.col
    sellers_at: dict = {v: [] for v in net.nodes}
    buyers_at: dict = {v: [] for v in net.nodes}
    for sl in s.sellers:
        sellers_at[sl.node].append(sl.id)
    for b in s.buyers:
        buyers_at[b.node].append(b.id)

    for v in net.nodes:
        inc = net.incident(v)
        for t in s.periods:
            terms = [(col(("x", b, t)), 1.0) for b in buyers_at[v]]
            terms += [(col(("f", k, v, w, t)), 1.0) for k, w in inc]
            terms += [(col(("y", sid, t)), -1.0) for sid in sellers_at[v]]
            if opts.weak:
                terms.append((col(("sigma", v, t)), 1.0))
            bld.add_row(terms, "=", -opts.auctioneer_demand, ("node-balance", v, t))
    for k, ln in enumerate(net.lines):
        for a, c in ((ln.from_node, ln.to_node), (ln.to_node, ln.from_node)):
            for t in s.periods:
                bld.add_row(
                    [(col(("f", k, a, c, t)), 1.0), (col(("theta", a, t)), -ln.susceptance),
                     (col(("theta", c, t)), ln.susceptance)],
                    "=", 0.0, ("flow-def", k, a, c, t))
    for t in s.periods:
        bld.add_row([(col(("theta", net.reference, t)), 1.0)], "=", 0.0, ("ref-angle", t))
    for b in s.buyers:
        for t in s.periods:
            terms = [(col(("x", b.id, t)), 1.0)]
            terms += [(col(("xl", b.id, t, l)), -1.0) for l in range(len(b.bids[t - 1]))]
            bld.add_row(terms, "=", b.inelastic[t - 1], ("buyer-agg", b.id, t))
    for sl in s.sellers:
        for t in s.periods:
            u = col(("u", sl.id, t))
            bids = sl.bids[t - 1]
            for l, bid in enumerate(bids):
                bld.add_row([(col(("yl", sl.id, t, l)), 1.0), (u, -bid.q)], "<", 0.0, ("seller-block", sl.id, t, l))
            y = col(("y", sl.id, t))
            bld.add_row([(y, 1.0)] + [(col(("yl", sl.id, t, l)), -1.0) for l in range(len(bids))],
                        "=", 0.0, ("seller-agg", sl.id, t))
            bld.add_row([(y, 1.0), (u, -sl.pmax[t - 1])], "<", 0.0, ("seller-max", sl.id, t))
            bld.add_row([(y, 1.0), (u, -sl.pmin[t - 1])], ">", 0.0, ("seller-min", sl.id, t))
        if sl.min_uptime >= 1:
            for t in s.periods:
                terms = [(col(("phi", sl.id, t)), 1.0), (col(("u", sl.id, t)), -1.0)]
                if t > 1:
                    terms.append((col(("u", sl.id, t - 1)), 1.0))
                bld.add_row(terms, ">", 0.0, ("startup", sl.id, t))
            for t in s.periods:
                first = max(1, t - sl.min_uptime + 1)
                terms = [(col(("phi", sl.id, i)), 1.0) for i in range(first, t + 1)]
                terms.append((col(("u", sl.id, t)), -1.0))
                bld.add_row(terms, "<", 0.0, ("uptime", sl.id, t))
    if opts.weak and opts.oversupply_cap is not None:
        terms = [(col(("sigma", v, t)), 1.0) for v in net.nodes for t in s.periods]
        terms += [(col(("x", b.id, t)), -opts.oversupply_cap) for b in s.buyers for t in s.periods]
        bld.add_row(terms, "<", 0.0, ("oversupply-cap",))

    return bld.build({"kind": kind, "alpha": opts.alpha, "balance": opts.balance,
                      "auctioneer_demand": opts.auctioneer_demand, "oversupply_cap": opts.oversupply_cap,
                      "horizon": T})


def build_dcopf_milp(s: Scenario, opts: ClearingOptions = ClearingOptions()) -> ProblemInstance:
    """Welfare maximization with binary commitments (the exact clearing problem)."""
    if opts.alpha != 0:
        raise ValueError("the exact clearing problem is unscaled; use alpha = 0")
    return _build(s, opts, BINARY, kind="dcopf-milp")


def build_cswmp(s: Scenario, opts: ClearingOptions = ClearingOptions()) -> ProblemInstance:
    """Convexified scaled problem: u relaxed to [0, 1], buyer values divided by 1 + alpha."""
    return _build(s, opts, CONTINUOUS, kind="cswmp")


def _check_u(s: Scenario, u: Mapping, complete: bool):
    keys = {(sl.id, t) for sl in s.sellers for t in s.periods}
    extra = set(u) - keys
    if extra:
        raise KeyError(f"unknown commitment keys {sorted(map(str, extra))[:5]}")
    if complete and set(u) != keys:
        missing = sorted(map(str, keys - set(u)))
        raise ValueError(f"fixed commitments missing for {missing[:5]}")
    for key, val in u.items():
        if val not in (0, 1):
            raise ValueError(f"commitment {key} must be 0 or 1, got {val!r}")


def build_rc_delta(s: Scenario, alpha: float, fixed_u: Mapping,
                   opts: ClearingOptions = ClearingOptions()) -> ProblemInstance:
    """Residual clearing after threshold rounding: every u fixed, the rest re-optimized.

    Auctioneer demand only perturbs the convexified problem and is not applied here.
    """
    _check_u(s, fixed_u, complete=True)
    o = opts.with_alpha(alpha).without_auctioneer()
    return _build(s, o, CONTINUOUS, fixed_u=fixed_u, kind="rc-delta")


def build_rc_milp(s: Scenario, alpha: float, integral_u: Mapping,
                  opts: ClearingOptions = ClearingOptions()) -> ProblemInstance:
    """Residual clearing with the commitments that were fractional left binary."""
    _check_u(s, integral_u, complete=False)
    o = opts.with_alpha(alpha).without_auctioneer()
    return _build(s, o, BINARY, fixed_u=integral_u, kind="rc-milp")


def variable_index(instance: ProblemInstance) -> VariableIndex:
    return instance.index


def expected_size(s: Scenario, opts: ClearingOptions = ClearingOptions()) -> tuple[int, int]:
    """(rows, columns) predicted by the closed-form counts in the module docstring."""
    V, E, T = len(s.network.nodes), len(s.network.lines), s.horizon
    U = sum(1 for sl in s.sellers if sl.min_uptime >= 1)
    rows = V * T + 2 * E * T + T + len(s.buyers) * T + 2 * U * T
    rows += sum(len(sl.bids[t]) + 3 for sl in s.sellers for t in range(T))
    cols = sum(len(b.bids[t]) + 1 for b in s.buyers for t in range(T))
    cols += sum(len(sl.bids[t]) + 2 for sl in s.sellers for t in range(T))
    cols += U * T + V * T + 2 * E * T
    if opts.weak:
        cols += V * T
        rows += opts.oversupply_cap is not None
    return rows, cols


# -- LP text export -----------------------------------------------------------


def _lp_name(name) -> str:
    return "_".join(str(p) for p in name).replace(" ", "").replace("-", "m")


def _lp_terms(items) -> str:
    out = []
    for coef, nm in items:
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {abs(coef):.17g} {nm}")
    text = " ".join(out) if out else "0"
    return text[2:] if text.startswith("+ ") else text


def to_lp_format(inst: ProblemInstance) -> str:
    """CPLEX-LP text of the instance, for cross-checking with external solvers.

    Grammar: `Maximize` objective, `Subject To` one row per line named
    `r<index>`, `Bounds` with `lo <= name <= hi` (or `name free`), `Binaries`,
    `End`. Variable names join the name tuple with underscores.
    """
    names = [_lp_name(n) for n in inst.index]
    lines = ["\\ " + str(inst.meta.get("kind", "")), "Maximize",
             " obj: " + _lp_terms((c, names[j]) for j, c in enumerate(inst.objective) if c != 0), "Subject To"]
    rel = {"=": "=", "<": "<=", ">": ">="}
    A = inst.A
    for i in range(inst.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = ((A.data[p], names[A.indices[p]]) for p in range(lo, hi))
        lines.append(f" r{i}: {_lp_terms(terms)} {rel[inst.senses[i]]} {inst.rhs[i]:.17g}")
    lines.append("Bounds")
    for j, nm in enumerate(names):
        lo, hi = inst.lb[j], inst.ub[j]
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" {nm} free")
        else:
            los = "-inf" if math.isinf(lo) else f"{lo:.17g}"
            his = "+inf" if math.isinf(hi) else f"{hi:.17g}"
            lines.append(f" {los} <= {nm} <= {his}")
    bins = [names[j] for j in inst.binaries]
    if bins:
        lines.append("Binaries")
        lines.extend(" " + b for b in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"
