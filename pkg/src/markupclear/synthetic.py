"""Seeded scenario generators and the bundled example fixtures."""

from __future__ import annotations

from importlib.resources import files

import numpy as np

from .scenario import Bid, Buyer, Line, Network, Scenario, Seller, parse_profiles, parse_scenario

EXAMPLES = ("example1", "example2", "example3")


def example(name: str) -> Scenario:
    """One of the bundled worked examples: example1, example2 or example3."""
    if name not in EXAMPLES:
        raise KeyError(f"no bundled example {name!r}; choose from {EXAMPLES}")
    return parse_scenario((files("markupclear") / "data" / f"{name}.json").read_text(encoding="utf-8"))


def example_path(name: str):
    return files("markupclear") / "data" / f"{name}.json"


def sample_profiles():
    return parse_profiles((files("markupclear") / "data" / "profiles_sample.csv").read_text(encoding="utf-8"))


def _tree(rng, n):
    """Random spanning tree on nodes 0..n-1 as (parent, child) pairs."""
    return [(int(rng.integers(i)), i) for i in range(1, n)]


def _seller(rng, sid, node, T, *, max_blocks=3, uptime_choices=(0, 0, 2)):
    blocks = int(rng.integers(1, max_blocks + 1))
    qs = np.round(rng.uniform(2, 12, size=blocks), 1)
    cost0 = rng.uniform(5, 40)
    prices = np.round(cost0 + np.cumsum(rng.uniform(0, 15, size=blocks)), 2)
    pmax = float(qs.sum())
    pmin = float(np.round(pmax * rng.choice([0.0, 0.3, 0.6]), 1))
    no_load = float(np.round(rng.choice([0.0, rng.uniform(5, 60)]), 2))
    bids = tuple(Bid(float(q), float(p)) for q, p in zip(qs, prices))
    return Seller(sid, node, (bids,) * T, (pmin,) * T, (pmax,) * T, no_load,
                  int(rng.choice(uptime_choices)) if T > 1 else 0)


def _buyer(rng, bid, node, T, cap):
    inel = [float(np.round(rng.uniform(0, cap), 1)) for _ in range(T)]
    blocks = int(rng.integers(1, 3))
    bids = []
    for _ in range(T):
        bids.append(tuple(Bid(float(np.round(rng.uniform(1, 6), 1)), float(np.round(rng.uniform(10, 90), 2)))
                          for _ in range(blocks)))
    dmax = [i + sum(b.q for b in bb) for i, bb in zip(inel, bids)]
    return Buyer(bid, node, tuple(bids), tuple(inel), tuple(dmax))


def random_scenario(seed: int, max_nodes: int = 3, max_sellers: int = 3, max_periods: int = 4,
                    max_binaries: int = 12, radial: bool = False) -> Scenario:
    """A small random market; sellers * periods never exceeds `max_binaries`."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_nodes + 1))
    nodes = tuple(f"n{i + 1}" for i in range(n))
    pairs = _tree(rng, n)
    if not radial and n >= 3 and rng.random() < 0.5:
        pairs.append((0, n - 1) if (0, n - 1) not in pairs else (1, n - 1))
    lines = tuple(Line(nodes[a], nodes[b], float(np.round(rng.uniform(0.5, 5), 2)),
                       -(cap := float(np.round(rng.uniform(3, 30), 1))), cap)
                  for a, b in pairs)
    n_sellers = int(rng.integers(1, max_sellers + 1))
    T = int(rng.integers(1, max_periods + 1))
    T = max(1, min(T, max_binaries // n_sellers))
    sellers = tuple(_seller(rng, f"s{i + 1}", nodes[int(rng.integers(n))], T) for i in range(n_sellers))
    capacity = sum(sl.pmax[0] for sl in sellers)
    n_buyers = int(rng.integers(1, 3))
    buyers = tuple(_buyer(rng, f"b{i + 1}", nodes[int(rng.integers(n))], T, 0.5 * capacity / n_buyers)
                   for i in range(n_buyers))
    return Scenario(Network(nodes, nodes[0], lines), sellers, buyers, T)


def radial_scenario(seed: int, min_nodes: int = 2, max_nodes: int = 5) -> Scenario:
    """Single-period market on a random tree with convex sellers, so IP prices are marginal costs."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_nodes, max_nodes + 1))
    nodes = tuple(f"n{i + 1}" for i in range(n))
    lines = tuple(Line(nodes[a], nodes[b], float(np.round(rng.uniform(0.5, 5), 2)),
                       -(cap := float(np.round(rng.uniform(2, 25), 1))), cap)
                  for a, b in _tree(rng, n))
    sellers = []
    for i in range(int(rng.integers(2, 5))):
        sl = _seller(rng, f"s{i + 1}", nodes[int(rng.integers(n))], 1, uptime_choices=(0,))
        sellers.append(Seller(sl.id, sl.node, sl.bids, (0.0,), sl.pmax, float(np.round(rng.choice([0.0, 20.0]), 2)), 0))
    capacity = sum(sl.pmax[0] for sl in sellers)
    buyers = tuple(_buyer(rng, f"b{i + 1}", nodes[int(rng.integers(n))], 1, 0.3 * capacity / 2)
                   for i in range(int(rng.integers(1, 4))))
    return Scenario(Network(nodes, nodes[0], lines), tuple(sellers), buyers, 1)


def performance_scenario(seed: int = 0, n_nodes: int = 50, n_periods: int = 24, n_sellers: int = 100,
                         n_buyers: int = 40) -> Scenario:
    """Desk-scale benchmark: meshed network, unit commitment with min uptimes, daily load shape."""
    rng = np.random.default_rng(seed)
    nodes = tuple(f"n{i + 1}" for i in range(n_nodes))
    pairs = _tree(rng, n_nodes)
    extra = set()
    while len(extra) < n_nodes // 5:
        a, b = sorted(int(v) for v in rng.choice(n_nodes, size=2, replace=False))
        if (a, b) not in pairs:
            extra.add((a, b))
    lines = tuple(Line(nodes[a], nodes[b], float(np.round(rng.uniform(1, 10), 2)),
                       -(cap := float(np.round(rng.uniform(250, 600), 0))), cap)
                  for a, b in pairs + sorted(extra))
    hours = np.arange(n_periods)
    shape = 0.75 + 0.25 * np.sin((hours - 6) / 24 * 2 * np.pi)
    sellers = []
    for i in range(n_sellers):
        blocks = int(rng.integers(2, 4))
        qs = np.round(rng.uniform(10, 60, size=blocks), 1)
        prices = np.round(rng.uniform(10, 50) + np.cumsum(rng.uniform(1, 20, size=blocks)), 2)
        pmax = float(qs.sum())
        pmin = float(np.round(pmax * rng.uniform(0.2, 0.5), 1))
        bids = tuple(Bid(float(q), float(p)) for q, p in zip(qs, prices))
        sellers.append(Seller(f"g{i + 1}", nodes[int(rng.integers(n_nodes))], (bids,) * n_periods,
                              (pmin,) * n_periods, (pmax,) * n_periods, float(np.round(rng.uniform(50, 400), 2)),
                              int(rng.choice([0, 2, 4]))))
    capacity = sum(sl.pmax[0] for sl in sellers)
    base = 0.45 * capacity / n_buyers
    buyers = []
    for j in range(n_buyers):
        scale = rng.uniform(0.6, 1.4)
        inel = tuple(float(np.round(base * scale * shape[h] * 0.8, 1)) for h in hours)
        bid = (Bid(float(np.round(base * scale * 0.2, 1)), float(np.round(rng.uniform(60, 150), 2))),)
        buyers.append(Buyer(f"d{j + 1}", nodes[int(rng.integers(n_nodes))], (bid,) * n_periods, inel,
                            tuple(i + bid[0].q for i in inel)))
    return Scenario(Network(nodes, nodes[0], lines), tuple(sellers), tuple(buyers), n_periods)
