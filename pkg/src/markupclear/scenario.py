"""Market scenarios: network, bids, JSON I/O, validation and the 24-hour extension.

A scenario is the economy being cleared: a DC network plus buyers and sellers
with per-period block bids. Periods are labelled 1..T everywhere outside the
raw per-period lists stored on the agents.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, replace
from typing import Any, NamedTuple, Sequence, Union

import jsonschema
import numpy as np

NodeId = Union[str, int]

SCENARIO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["horizon", "network", "sellers", "buyers"],
    "additionalProperties": False,
    "$defs": {
        "id": {"type": ["string", "integer"]},
        "series": {"type": "array", "items": {"type": "number"}},
        "bids": {
            "type": "array",
            "items": {"type": "array", "items": {"$ref": "#/$defs/bid"}},
        },
        "bid": {
            "type": "object",
            "required": ["q"],
            "additionalProperties": False,
            "properties": {"q": {"type": "number"}, "c": {"type": "number"}, "v": {"type": "number"}},
        },
    },
    "properties": {
        "horizon": {"type": "integer", "minimum": 1},
        "network": {
            "type": "object",
            "required": ["reference", "nodes", "lines"],
            "additionalProperties": False,
            "properties": {
                "reference": {"$ref": "#/$defs/id"},
                "nodes": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/id"}},
                "lines": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["from", "to", "susceptance", "fmin", "fmax"],
                        "additionalProperties": False,
                        "properties": {
                            "from": {"$ref": "#/$defs/id"},
                            "to": {"$ref": "#/$defs/id"},
                            "susceptance": {"type": "number"},
                            "fmin": {"type": "number"},
                            "fmax": {"type": "number"},
                        },
                    },
                },
            },
        },
        "sellers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "node", "no_load", "min_uptime", "pmin", "pmax", "bids"],
                "additionalProperties": False,
                "properties": {
                    "id": {"$ref": "#/$defs/id"},
                    "node": {"$ref": "#/$defs/id"},
                    "no_load": {"type": "number"},
                    "min_uptime": {"type": "integer"},
                    "pmin": {"$ref": "#/$defs/series"},
                    "pmax": {"$ref": "#/$defs/series"},
                    "bids": {"$ref": "#/$defs/bids"},
                },
            },
        },
        "buyers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "node", "inelastic", "dmax", "bids"],
                "additionalProperties": False,
                "properties": {
                    "id": {"$ref": "#/$defs/id"},
                    "node": {"$ref": "#/$defs/id"},
                    "inelastic": {"$ref": "#/$defs/series"},
                    "dmax": {"$ref": "#/$defs/series"},
                    "bids": {"$ref": "#/$defs/bids"},
                },
            },
        },
    },
}


class Bid(NamedTuple):
    """One block: quantity in MWh and a price (cost for sellers, value for buyers)."""

    q: float
    price: float


@dataclass(frozen=True)
class Line:
    from_node: NodeId
    to_node: NodeId
    susceptance: float
    fmin: float
    fmax: float


@dataclass(frozen=True)
class Network:
    nodes: tuple
    reference: NodeId
    lines: tuple[Line, ...] = ()

    def incident(self, node) -> list[tuple[int, NodeId]]:
        """(line index, neighbour) pairs for every line touching `node`."""
        out = []
        for k, ln in enumerate(self.lines):
            if ln.from_node == node:
                out.append((k, ln.to_node))
            elif ln.to_node == node:
                out.append((k, ln.from_node))
        return out

    def is_radial(self) -> bool:
        return len(self.lines) == len(self.nodes) - 1 and _connected(self)


@dataclass(frozen=True)
class Seller:
    id: NodeId
    node: NodeId
    bids: tuple[tuple[Bid, ...], ...]
    pmin: tuple[float, ...]
    pmax: tuple[float, ...]
    no_load: float = 0.0
    min_uptime: int = 0

    @property
    def is_renewable(self) -> bool:
        # zero no-load cost is the RES criterion used by the 24h extension
        return self.no_load == 0


@dataclass(frozen=True)
class Buyer:
    id: NodeId
    node: NodeId
    bids: tuple[tuple[Bid, ...], ...]
    inelastic: tuple[float, ...]
    dmax: tuple[float, ...]


@dataclass(frozen=True)
class Scenario:
    network: Network
    sellers: tuple[Seller, ...]
    buyers: tuple[Buyer, ...]
    horizon: int

    @property
    def periods(self) -> range:
        return range(1, self.horizon + 1)

    def seller(self, sid) -> Seller:
        for s in self.sellers:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def buyer(self, bid) -> Buyer:
        for b in self.buyers:
            if b.id == bid:
                return b
        raise KeyError(bid)


@dataclass(frozen=True)
class Violation:
    rule: str
    path: str
    message: str = ""


class ScenarioError(ValueError):
    pass


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, msg: str, line: int, column: int):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.line = line
        self.column = column


class ScenarioSchemaError(ScenarioError):
    def __init__(self, msg: str, path: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class ScenarioValidationError(ScenarioError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        rules = sorted({v.rule for v in self.violations})
        super().__init__("scenario failed validation: " + ", ".join(rules))

    @property
    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


# -- JSON ---------------------------------------------------------------------


def _bids_from_json(raw, key):
    return tuple(tuple(Bid(float(b["q"]), float(b.get(key, 0.0))) for b in per_t) for per_t in raw)


def _json_path(err: jsonschema.ValidationError) -> str:
    path = "$"
    for p in err.absolute_path:
        path += f"[{p}]" if isinstance(p, int) else f".{p}"
    return path


def scenario_from_dict(doc: dict, validate_result: bool = True) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ScenarioSchemaError(errors[0].message, _json_path(errors[0]))
    net = doc["network"]
    network = Network(
        nodes=tuple(net["nodes"]),
        reference=net["reference"],
        lines=tuple(
            Line(ln["from"], ln["to"], float(ln["susceptance"]), float(ln["fmin"]), float(ln["fmax"]))
            for ln in net["lines"]
        ),
    )
    sellers = tuple(
        Seller(
            id=s["id"],
            node=s["node"],
            bids=_bids_from_json(s["bids"], "c"),
            pmin=tuple(float(v) for v in s["pmin"]),
            pmax=tuple(float(v) for v in s["pmax"]),
            no_load=float(s["no_load"]),
            min_uptime=int(s["min_uptime"]),
        )
        for s in doc["sellers"]
    )
    buyers = tuple(
        Buyer(
            id=b["id"],
            node=b["node"],
            bids=_bids_from_json(b["bids"], "v"),
            inelastic=tuple(float(v) for v in b["inelastic"]),
            dmax=tuple(float(v) for v in b["dmax"]),
        )
        for b in doc["buyers"]
    )
    scenario = Scenario(network, sellers, buyers, int(doc["horizon"]))
    if validate_result:
        violations = validate(scenario)
        if violations:
            raise ScenarioValidationError(violations)
        if not supply_adequate(scenario):
            warnings.warn("aggregate supply capacity is below inelastic demand; clearing will be infeasible")
    return scenario


def parse_scenario(raw: Union[str, bytes]) -> Scenario:
    """Parse a scenario JSON document.

    Raises ScenarioSyntaxError (with line/column), ScenarioSchemaError (with the
    offending field path) or ScenarioValidationError (with rule ids).
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return parse_scenario(fh.read())


def _num(v: float):
    # integral floats are written as ints so canonical text is stable
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else float(v)


def scenario_to_dict(s: Scenario) -> dict:
    net = s.network
    return {
        "horizon": s.horizon,
        "network": {
            "reference": net.reference,
            "nodes": list(net.nodes),
            "lines": [
                {"from": ln.from_node, "to": ln.to_node, "susceptance": _num(ln.susceptance),
                 "fmin": _num(ln.fmin), "fmax": _num(ln.fmax)}
                for ln in net.lines
            ],
        },
        "sellers": [
            {
                "id": sl.id,
                "node": sl.node,
                "no_load": _num(sl.no_load),
                "min_uptime": sl.min_uptime,
                "pmin": [_num(v) for v in sl.pmin],
                "pmax": [_num(v) for v in sl.pmax],
                "bids": [[{"q": _num(b.q), "c": _num(b.price)} for b in per_t] for per_t in sl.bids],
            }
            for sl in s.sellers
        ],
        "buyers": [
            {
                "id": b.id,
                "node": b.node,
                "inelastic": [_num(v) for v in b.inelastic],
                "dmax": [_num(v) for v in b.dmax],
                "bids": [[{"q": _num(x.q), "v": _num(x.price)} for x in per_t] for per_t in b.bids],
            }
            for b in s.buyers
        ],
    }


def serialize_scenario(s: Scenario) -> str:
    """Canonical JSON text (fixed key order, two-space indent, trailing newline)."""
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_scenario(s))


# -- validation ---------------------------------------------------------------


def _connected(net: Network) -> bool:
    if not net.nodes:
        return False
    adj: dict = {v: set() for v in net.nodes}
    for ln in net.lines:
        if ln.from_node in adj and ln.to_node in adj:
            adj[ln.from_node].add(ln.to_node)
            adj[ln.to_node].add(ln.from_node)
    seen = {net.nodes[0]}
    stack = [net.nodes[0]]
    while stack:
        v = stack.pop()
        for w in adj[v] - seen:
            seen.add(w)
            stack.append(w)
    return len(seen) == len(adj)


def validate(s: Scenario, tol: float = 1e-9) -> list[Violation]:
    """Check every scenario invariant; returns an empty list when the scenario is valid."""
    out: list[Violation] = []
    net = s.network
    nodes = set(net.nodes)
    T = s.horizon

    if len(nodes) != len(net.nodes):
        out.append(Violation("duplicate-node", "network.nodes"))
    if net.reference not in nodes:
        out.append(Violation("reference-node", "network.reference", f"{net.reference!r} is not a node"))
    endpoints_ok = True
    for k, ln in enumerate(net.lines):
        p = f"network.lines[{k}]"
        if ln.from_node not in nodes or ln.to_node not in nodes:
            out.append(Violation("line-endpoint", p))
            endpoints_ok = False
        if ln.from_node == ln.to_node:
            out.append(Violation("line-self-loop", p))
        if ln.fmin > ln.fmax:
            out.append(Violation("line-flow-bounds", p, "fmin > fmax"))
        if not ln.susceptance > 0:
            out.append(Violation("line-susceptance", p, "susceptance must be positive"))
    if endpoints_ok and nodes and not _connected(net):
        out.append(Violation("network-connected", "network", "network graph is not connected"))

    for kind, agents in (("sellers", s.sellers), ("buyers", s.buyers)):
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            out.append(Violation("duplicate-id", kind))
        for i, a in enumerate(agents):
            p = f"{kind}[{i}]"
            if a.node not in nodes:
                out.append(Violation("agent-node", p + ".node", f"unknown node {a.node!r}"))
            series = ("bids", "pmin", "pmax") if kind == "sellers" else ("bids", "inelastic", "dmax")
            if any(len(getattr(a, f)) != T for f in series):
                out.append(Violation("horizon-length", p, f"per-period data must have {T} entries"))
                continue
            for t in range(T):
                for l, b in enumerate(a.bids[t]):
                    if b.q < 0:
                        out.append(Violation("nonnegative-quantity", f"{p}.bids[{t}][{l}].q"))
            if kind == "sellers":
                if not 0 <= a.min_uptime <= T:
                    out.append(Violation("min-uptime", p + ".min_uptime", "must lie in [0, horizon]"))
                if a.no_load < 0:
                    out.append(Violation("nonnegative-cost", p + ".no_load"))
                for t in range(T):
                    cap = sum(b.q for b in a.bids[t])
                    if a.pmin[t] < 0 or a.pmin[t] > a.pmax[t] + tol or a.pmax[t] > cap + tol:
                        out.append(Violation("seller-output-bounds", f"{p}[t={t + 1}]",
                                             "need 0 <= pmin <= pmax <= sum of bid quantities"))
            else:
                for t in range(T):
                    cap = sum(b.q for b in a.bids[t])
                    if a.inelastic[t] < 0 or a.inelastic[t] > a.dmax[t] + tol or a.dmax[t] > a.inelastic[t] + cap + tol:
                        out.append(Violation("buyer-demand-bounds", f"{p}[t={t + 1}]",
                                             "need 0 <= inelastic <= dmax <= inelastic + sum of bid quantities"))
    return out


def supply_adequate(s: Scenario) -> bool:
    supply = sum(sum(sl.pmax) for sl in s.sellers)
    need = sum(sum(b.inelastic) for b in s.buyers)
    return supply + 1e-9 >= need


class Totals(NamedTuple):
    demand: float
    supply: float
    n_nodes: int
    n_lines: int
    n_sellers: int
    n_buyers: int
    horizon: int


def totals(s: Scenario) -> Totals:
    """Maximum demand and supply capacity summed over agents and periods (MWh)."""
    return Totals(
        demand=float(sum(sum(b.dmax) for b in s.buyers)),
        supply=float(sum(sum(sl.pmax) for sl in s.sellers)),
        n_nodes=len(s.network.nodes),
        n_lines=len(s.network.lines),
        n_sellers=len(s.sellers),
        n_buyers=len(s.buyers),
        horizon=s.horizon,
    )


# -- 24-hour extension --------------------------------------------------------


@dataclass(frozen=True)
class RenewableProfiles:
    """Hourly availability factors for wind and solar units (24 values each).

    `base_hour` (1-based) is the hour that corresponds to the single-period data.
    """

    wind: tuple[float, ...]
    solar: tuple[float, ...]
    base_hour: int = 8

    def __post_init__(self):
        if len(self.wind) != 24 or len(self.solar) != 24:
            raise ScenarioSchemaError("profiles need exactly 24 hourly rows", "profiles")
        if not 1 <= self.base_hour <= 24:
            raise ValueError("base_hour must be in 1..24")
        if min(self.wind) < 0 or min(self.solar) < 0:
            raise ValueError("profile factors must be nonnegative")

    def normalized(self) -> "RenewableProfiles":
        b = self.base_hour - 1
        if self.wind[b] <= 0 or self.solar[b] <= 0:
            raise ValueError(f"profile factor at base hour {self.base_hour} must be positive")
        return replace(
            self,
            wind=tuple(v / self.wind[b] for v in self.wind),
            solar=tuple(v / self.solar[b] for v in self.solar),
        )


def parse_profiles(text: str, base_hour: int = 8) -> RenewableProfiles:
    """Read a `hour,wind,solar` CSV with one row per hour 1..24."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != {"hour", "wind", "solar"}:
        raise ScenarioSchemaError("expected columns hour,wind,solar", "profiles.header")
    if len(rows) != 24:
        raise ScenarioSchemaError(f"expected 24 rows, got {len(rows)}", "profiles")
    try:
        rows.sort(key=lambda r: int(r["hour"]))
        hours = [int(r["hour"]) for r in rows]
        wind = tuple(float(r["wind"]) for r in rows)
        solar = tuple(float(r["solar"]) for r in rows)
    except (TypeError, ValueError) as exc:
        raise ScenarioSchemaError(str(exc), "profiles") from None
    if hours != list(range(1, 25)):
        raise ScenarioSchemaError("hours must be 1..24", "profiles.hour")
    return RenewableProfiles(wind, solar, base_hour)


def load_profiles(path, base_hour: int = 8) -> RenewableProfiles:
    with open(path, encoding="utf-8") as fh:
        return parse_profiles(fh.read(), base_hour)


UPTIME_CHOICES = (0, 4, 6)


def extend_to_multiperiod(
    s: Scenario,
    profiles: RenewableProfiles,
    seed: int,
    uptime_threshold: float = 1500.0,
) -> Scenario:
    """Turn a single-period scenario into a 24-hour one.

    Sellers with zero no-load cost are renewable; each is made wind or solar by
    a fair coin and its quantities (bids, pmin, pmax) follow that profile, equal
    to the original data at the base hour. Other sellers keep their data in
    every hour and get a minimum uptime drawn from {0, 4, 6} when their pmax is
    below `uptime_threshold`, else none. Buyers are replicated.

    Draws come from numpy's PCG64 seeded with `seed`. For every seller, in file
    order, one coin (`random() < 0.5` means wind) and then one die
    (`integers(3)` indexing {0, 4, 6}) are drawn, whether or not they are used.
    """
    if s.horizon != 1:
        raise ScenarioError("horizon must be 1")
    prof = profiles.normalized()
    rng = np.random.Generator(np.random.PCG64(seed))
    hours = range(24)
    sellers = []
    for sl in s.sellers:
        wind = bool(rng.random() < 0.5)
        die = int(rng.integers(3))
        bids0, pmin0, pmax0 = sl.bids[0], sl.pmin[0], sl.pmax[0]
        if sl.is_renewable:
            factors = prof.wind if wind else prof.solar
            sellers.append(replace(
                sl,
                bids=tuple(tuple(Bid(b.q * factors[h], b.price) for b in bids0) for h in hours),
                pmin=tuple(pmin0 * factors[h] for h in hours),
                pmax=tuple(pmax0 * factors[h] for h in hours),
                min_uptime=0,
            ))
        else:
            uptime = UPTIME_CHOICES[die] if pmax0 < uptime_threshold else 0
            sellers.append(replace(
                sl,
                bids=tuple(bids0 for _ in hours),
                pmin=(pmin0,) * 24,
                pmax=(pmax0,) * 24,
                min_uptime=uptime,
            ))
    buyers = tuple(
        replace(b, bids=tuple(b.bids[0] for _ in hours), inelastic=(b.inelastic[0],) * 24, dmax=(b.dmax[0],) * 24)
        for b in s.buyers
    )
    return Scenario(s.network, tuple(sellers), buyers, 24)


def renewable_types(s: Scenario, seed: int) -> dict:
    """The wind/solar assignment `extend_to_multiperiod` makes for `seed` (RES sellers only)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = {}
    for sl in s.sellers:
        wind = bool(rng.random() < 0.5)
        rng.integers(3)
        if sl.is_renewable:
            out[sl.id] = "wind" if wind else "solar"
    return out
