import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import enumerate_milp, scipy_lp_value
from markupclear.bb import MilpConfig, MilpStatus, fix_binaries, solve_milp
from markupclear.formulation import CONTINUOUS, build_cswmp, build_dcopf_milp
from markupclear.lp import solve_lp
from markupclear.scenario import extend_to_multiperiod
from markupclear.synthetic import random_scenario, sample_profiles


def test_example1_optimum(ex1):
    res = solve_milp(build_dcopf_milp(ex1))
    assert res.status == MilpStatus.OPTIMAL
    assert res.objective == pytest.approx(-30.0)
    assert res.value(("u", "s1", 1)) == 1.0 and res.value(("u", "s2", 1)) == 0.0
    assert res.value(("y", "s1", 1)) == pytest.approx(10.0)
    assert res.value(("xl", "b", 1, 0)) == pytest.approx(2.0)
    assert res.gap == 0.0


def test_all_binaries_fixed_solves_at_root(ex1):
    inst = build_dcopf_milp(ex1)
    lb, ub = inst.lb.copy(), inst.ub.copy()
    lb[inst.binaries] = ub[inst.binaries] = [1.0, 0.0]
    res = solve_milp(inst.replace_bounds(lb, ub))
    assert res.nodes == 1
    assert res.objective == pytest.approx(-30.0)


def test_fix_binaries(ex1):
    inst = build_dcopf_milp(ex1)
    lp = fix_binaries(inst, {("u", "s1", 1): 1, ("u", "s2", 1): 0})
    assert lp.binaries.size == 0
    assert solve_lp(lp).objective == pytest.approx(-30.0)
    off = fix_binaries(inst, {("u", "s1", 1): 0, ("u", "s2", 1): 0})
    assert scipy_lp_value(off) is None
    assert not solve_lp(off).optimal
    with pytest.raises(ValueError, match="non-binary"):
        fix_binaries(inst, {("u", "s1", 1): 0.5, ("u", "s2", 1): 0})
    with pytest.raises(ValueError, match="no value"):
        fix_binaries(inst, {("u", "s1", 1): 1})
    with pytest.raises(KeyError):
        fix_binaries(inst, {("u", "s1", 1): 1, ("u", "s2", 1): 0, ("u", "s9", 1): 0})


def test_fix_binaries_without_binaries_is_identity(ex1):
    inst = build_cswmp(ex1)
    same = fix_binaries(inst, {})
    assert np.array_equal(same.lb, inst.lb) and np.array_equal(same.ub, inst.ub)
    assert (same.A != inst.A).nnz == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1_000_000))
def test_matches_enumeration(seed):
    inst = build_dcopf_milp(random_scenario(seed, max_binaries=8))
    oracle = enumerate_milp(inst)
    res = solve_milp(inst)
    if oracle is None:
        assert res.status == MilpStatus.INFEASIBLE and not res.has_incumbent
        return
    assert res.status == MilpStatus.OPTIMAL
    assert res.objective == pytest.approx(oracle, rel=1e-6, abs=1e-6)
    x = res.primal
    assert inst.max_violation(x) <= 1e-6
    assert np.all(np.isin(x[inst.binaries], (0.0, 1.0)))


@pytest.mark.slow
def test_24_period_restricted_enumeration():
    # three sellers over 24 hours; commitments in hours 5..24 pinned on, hours 1..4 free (12 binaries)
    base = random_scenario(27, max_sellers=3, max_periods=1, max_binaries=3)
    s = extend_to_multiperiod(base, sample_profiles(), 27)
    assert len(s.sellers) == 3 and s.horizon == 24
    inst = build_dcopf_milp(s)
    lb, ub, integ = inst.lb.copy(), inst.ub.copy(), inst.integrality.copy()
    for sl in s.sellers:
        for t in range(5, 25):
            j = inst.column(("u", sl.id, t))
            lb[j] = ub[j] = 1.0
            integ[j] = CONTINUOUS
    restricted = inst.replace_bounds(lb, ub, integ)
    assert restricted.binaries.size == 12
    res = solve_milp(restricted)
    assert res.status == MilpStatus.OPTIMAL
    assert res.objective == pytest.approx(enumerate_milp(restricted), rel=1e-6)


@pytest.mark.parametrize("seed", [3, 6, 19, 33, 55])
def test_bound_sandwich(seed):
    inst = build_dcopf_milp(random_scenario(seed, max_binaries=10))
    res = solve_milp(inst, MilpConfig(keep_trace=True))
    assert len(res.trace) == res.nodes > 1
    for row in res.trace:
        assert row["bound"] <= row["parent_bound"] + 1e-7 * max(1.0, abs(row["parent_bound"]))
    assert res.objective <= res.bound + 1e-9
    assert all(r["incumbent"] <= res.bound + 1e-6 for r in res.trace)


def test_deterministic():
    inst = build_dcopf_milp(random_scenario(19, max_binaries=10))
    a = solve_milp(inst, MilpConfig(keep_trace=True))
    b = solve_milp(inst, MilpConfig(keep_trace=True))
    assert a.trace == b.trace
    assert np.array_equal(a.primal, b.primal)


def test_node_limit_statuses():
    inst = build_dcopf_milp(random_scenario(19, max_binaries=10))
    full = solve_milp(inst)
    assert full.nodes > 3
    one = solve_milp(inst, MilpConfig(node_limit=1))
    assert one.nodes == 1
    assert one.status == MilpStatus.LIMIT_REACHED
    assert not one.has_incumbent and one.gap == math.inf
    assert one.bound >= full.objective - 1e-6
    partial = None
    for limit in range(2, full.nodes):
        r = solve_milp(inst, MilpConfig(node_limit=limit))
        if r.has_incumbent:
            partial = r
            break
    if partial is not None and partial.status == MilpStatus.FEASIBLE:
        assert partial.objective <= full.objective + 1e-6
        assert partial.bound >= full.objective - 1e-6
        assert partial.gap >= 0


def test_time_limit_zero():
    inst = build_dcopf_milp(random_scenario(19, max_binaries=10))
    res = solve_milp(inst, MilpConfig(time_limit=0.0))
    assert res.status == MilpStatus.LIMIT_REACHED
    assert res.nodes <= 1


def test_gap_tolerance_prunes():
    inst = build_dcopf_milp(random_scenario(3, max_binaries=10))
    tight = solve_milp(inst)
    loose = solve_milp(inst, MilpConfig(gap_tol=0.5))
    assert loose.status == MilpStatus.OPTIMAL
    assert loose.nodes <= tight.nodes
    assert loose.bound - loose.objective <= 0.5 * max(1.0, abs(loose.objective)) + 1e-9
