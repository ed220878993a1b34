import numpy as np
import pytest
from hypothesis import given, strategies as st

from markupclear.bb import solve_milp
from markupclear.formulation import ClearingOptions, build_dcopf_milp
from markupclear.markup import (
    InfeasibleClearing, MarkupConfig, NoFeasibleMarkup, allocation_distance, free_commitments, milp_round,
    residual_clear, round_threshold, run_markup, search_delta, solve_phase1,
)
from markupclear.metrics import check_allocation, welfare
from markupclear.scenario import Bid, Buyer, Network, Scenario, Seller
from markupclear.synthetic import random_scenario

WEAK5_A1 = ClearingOptions("weak", 5.0, alpha=1.0)


def _convex():
    sellers = (Seller("g1", "a", ((Bid(10.0, 10.0),),), (0.0,), (10.0,)),
               Seller("g2", "a", ((Bid(10.0, 20.0),),), (0.0,), (10.0,)))
    buyers = (Buyer("d", "a", ((Bid(10.0, 15.0),),), (5.0,), (15.0,)),)
    return Scenario(Network(("a",), "a"), sellers, buyers, 1)


def _single_lumpy():
    # one unit that must run at 5..10 MWh against 3 MWh of demand
    return Scenario(Network(("a",), "a"), (Seller("g", "a", ((Bid(10.0, 1.0),),), (5.0,), (10.0,)),),
                    (Buyer("d", "a", ((),), (3.0,), (3.0,)),), 1)


def test_phase1_example1(ex1):
    p = solve_phase1(ex1, WEAK5_A1)
    assert p.u == pytest.approx({("s1", 1): 0.5, ("s2", 1): 1.0})
    assert p.prices == pytest.approx({("n1", 1): 5.0})
    assert p.integral_set == {("s2", 1)}
    assert p.fractional == pytest.approx({("s1", 1): 0.5})


def test_phase1_without_tie_break_keeps_prices(ex1):
    p = solve_phase1(ex1, WEAK5_A1, tie_break=False)
    assert p.prices == pytest.approx({("n1", 1): 5.0})
    assert p.lp.objective == pytest.approx(solve_phase1(ex1, WEAK5_A1).lp.objective)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_phase1_convex_all_integral(alpha):
    s = _convex()
    p = solve_phase1(s, ClearingOptions(alpha=alpha))
    assert set(free_commitments(s)) == {("g1", 1), ("g2", 1)}
    assert p.integral_set == frozenset(p.u)
    assert set(p.u.values()) <= {0.0, 1.0}
    choice = search_delta(s, alpha, p, (0.01, 0.5, 1.0))
    assert [t.welfare for t in choice.trials] == pytest.approx([welfare(p.allocation, s)] * 3)


def test_phase1_example3_infeasible(ex3):
    with pytest.raises(InfeasibleClearing) as err:
        solve_phase1(ex3, ClearingOptions("weak", 500.0, alpha=0.1))
    assert err.value.stage == "phase1"
    assert err.value.detail["auctioneer_demand"] == 500.0
    assert "R=500" in str(err.value)


def test_round_threshold_cases():
    assert round_threshold({"a": 0.5}, 0.5) == {"a": 1}
    assert round_threshold({"a": 0.7}, 0.8) == {"a": 0}
    assert round_threshold({"a": 1.0}, 1.0) == {"a": 1}
    assert list(round_threshold(np.array([0.0, 0.2, 1.0]), 0.2)) == [0, 1, 1]
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            round_threshold({"a": 0.5}, bad)
    with pytest.raises(ValueError):
        round_threshold({"a": 1.2}, 0.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(1e-6, 1))
def test_round_threshold_idempotent(u, delta):
    once = round_threshold(np.array(u), delta)
    assert np.array_equal(round_threshold(once, delta), once)


def test_residual_clear_examples(ex1, ex2):
    a1 = residual_clear(ex1, 1.0, {("s1", 1): 0, ("s2", 1): 1})
    assert a1.y[("s2", 1)] == pytest.approx(8.0)
    assert welfare(a1, ex1) == pytest.approx(-32.0)
    p2 = solve_phase1(ex2, WEAK5_A1)
    a2 = residual_clear(ex2, 1.0, {("s1", 1): 0, ("s2", 1): 1})
    assert (a2.y_l[("s2", 1, 0)], a2.y_l[("s2", 1, 1)]) == pytest.approx((8.0, 2.0))
    assert allocation_distance(a2, p2.allocation) == pytest.approx(7.28, abs=5e-3)


def test_residual_clear_all_off(ex1):
    with pytest.raises(InfeasibleClearing) as err:
        residual_clear(ex1, 0.0, {("s1", 1): 0, ("s2", 1): 0})
    assert err.value.stage == "rc-delta"


def test_search_delta_example1(ex1):
    p = solve_phase1(ex1, WEAK5_A1)
    choice = search_delta(ex1, 1.0, p, (0.2, 0.5, 0.8))
    # 0.2 and 0.5 commit both units: 18 MWh minimum output exceeds what the cap lets 10 MWh absorb
    feasible = {t.delta: t.feasible for t in choice.trials}
    assert feasible == {0.2: False, 0.5: False, 0.8: True}
    assert choice.delta == 0.8
    assert choice.welfare == pytest.approx(-32.0)


def test_search_delta_tie_goes_to_smallest(ex1):
    p = solve_phase1(ex1, WEAK5_A1)
    choice = search_delta(ex1, 1.0, p, (0.9, 0.6, 0.8))
    assert choice.delta == 0.6
    assert [t.delta for t in choice.trials] == [0.6, 0.8, 0.9]
    assert len({t.pattern for t in choice.trials}) == 1


def test_search_delta_parallel_matches_serial(ex2):
    p = solve_phase1(ex2, ClearingOptions("weak", 5.0, alpha=1.0))
    deltas = (0.01, 0.1, 0.5, 0.7, 0.9)
    a = search_delta(ex2, 1.0, p, deltas)
    b = search_delta(ex2, 1.0, p, deltas, jobs=4)
    assert a.trials == b.trials and a.delta == b.delta


def test_search_delta_all_infeasible():
    s = _single_lumpy()
    p = solve_phase1(s, ClearingOptions("weak", 0.0, None))
    assert p.u[("g", 1)] < 1
    with pytest.raises(InfeasibleClearing, match="every threshold"):
        search_delta(s, 0.0, p, (1.0,))
    with pytest.raises(ValueError):
        search_delta(s, 0.0, p, ())


def test_milp_round_example1(ex1):
    p = solve_phase1(ex1, WEAK5_A1)
    a = milp_round(ex1, 1.0, p)
    assert a.u == {("s1", 1): 0.0, ("s2", 1): 1.0}
    assert welfare(a, ex1) == pytest.approx(welfare(residual_clear(ex1, 1.0, a.u), ex1))


def test_milp_round_example2(ex2):
    opts = ClearingOptions("weak", 5.0, alpha=1.0)
    a = milp_round(ex2, 1.0, solve_phase1(ex2, opts))
    assert check_allocation(ex2, a, "weak") == []
    assert set(a.u.values()) <= {0.0, 1.0}


def test_milp_round_all_integral_equals_residual():
    s = _convex()
    p = solve_phase1(s, ClearingOptions(alpha=0.2))
    a = milp_round(s, 0.2, p)
    b = residual_clear(s, 0.2, {k: int(v) for k, v in p.u.items()})
    assert welfare(a, s) == pytest.approx(welfare(b, s))


def test_run_markup_example1_from_zero(ex1):
    cfg = MarkupConfig(alphas=(0.0, 0.01, 0.1, 0.2, 1.0, 1.5), options=ClearingOptions("weak", 5.0),
                       allow_alpha_ge_1=True)
    out = run_markup(ex1, cfg)
    assert out.alpha == 0.0
    assert out.total_mwp == 0.0
    assert out.budget_deficit <= 1e-9
    assert [r.status for r in out.scan] == ["accepted"]


def test_run_markup_example1_at_one(ex1):
    cfg = MarkupConfig(alphas=(1.0,), options=ClearingOptions("weak", 5.0), allow_alpha_ge_1=True)
    out = run_markup(ex1, cfg)
    assert out.budget["buyer_payments"] == pytest.approx(80.0)
    assert out.budget["seller_revenue"] == pytest.approx(40.0)
    assert out.budget["surplus"] == pytest.approx(40.0)
    assert out.total_mwp == 0.0
    assert out.buyer_prices == pytest.approx({("n1", 1): 10.0})
    assert out.buyer_price_factor == 2.0
    assert out.welfare == pytest.approx(-32.0)


def test_run_markup_convex_walrasian():
    out = run_markup(_convex())
    assert out.alpha == 0.0
    assert out.total_mwp == 0.0
    assert out.budget["surplus"] == pytest.approx(0.0)


@pytest.mark.parametrize("rounding", ["threshold", "milp"])
def test_run_markup_reports_every_failed_alpha(ex2, rounding):
    with pytest.raises(NoFeasibleMarkup) as err:
        run_markup(ex2, MarkupConfig(alphas=(0.0,), rounding=rounding))
    (rec,) = err.value.diagnostics
    assert rec.status == "budget"
    assert rec.mwps == pytest.approx(182.0)
    assert rec.budget_after_mwp == pytest.approx(-182.0)


def test_run_markup_infeasible_alpha_recorded(ex3):
    cfg = MarkupConfig(alphas=(0.0, 0.1), options=ClearingOptions("weak", 500.0))
    with pytest.raises(NoFeasibleMarkup) as err:
        run_markup(ex3, cfg)
    assert [r.status for r in err.value.diagnostics] == ["infeasible", "infeasible"]


def test_markup_config_validation():
    with pytest.raises(ValueError):
        MarkupConfig(alphas=())
    with pytest.raises(ValueError):
        MarkupConfig(alphas=(0.1, 0.0))
    with pytest.raises(ValueError):
        MarkupConfig(alphas=(0.0, 1.0))
    with pytest.raises(ValueError):
        MarkupConfig(deltas=(0.0,))
    with pytest.raises(ValueError):
        MarkupConfig(rounding="nearest")
    assert MarkupConfig(alphas=(1.0,), allow_alpha_ge_1=True).alphas == (1.0,)


@pytest.mark.parametrize("rounding", ["threshold", "milp"])
def test_run_markup_invariants_random(rounding):
    accepted = 0
    for seed in range(25):
        s = random_scenario(seed, max_binaries=8)
        inst = build_dcopf_milp(s)
        opt = solve_milp(inst)
        try:
            out = run_markup(s, MarkupConfig(rounding=rounding))
        except (NoFeasibleMarkup, InfeasibleClearing):
            continue
        accepted += 1
        assert check_allocation(s, out.allocation, "strict") == []
        assert out.buyer_prices == {k: (1 + out.alpha) * p for k, p in out.prices.items()}
        assert out.budget["surplus"] - out.total_mwp >= -1e-6 * (1 + out.budget["buyer_payments"])
        assert out.budget["surplus"] == pytest.approx(out.alpha * out.budget["priced_demand"], abs=1e-6)
        assert all(r.status != "accepted" for r in out.scan[:-1])
        assert out.scan[-1].alpha == out.alpha
        if opt.has_incumbent:
            assert out.welfare <= opt.objective + 1e-6 * max(1.0, abs(opt.objective))
    assert accepted >= 10
