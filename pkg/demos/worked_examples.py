"""Walk the three bundled markets through phase 1, rounding and pricing.

Run: python demos/worked_examples.py
"""

from markupclear import ClearingOptions, MarkupConfig, run_markup, solve_phase1
from markupclear.bb import solve_milp
from markupclear.formulation import build_cswmp, build_dcopf_milp
from markupclear.lp import solve_lp
from markupclear.markup import allocation_distance, residual_clear, round_threshold
from markupclear.metrics import agent_utility, mwp, rwl
from markupclear.synthetic import example

WEAK5 = ClearingOptions("weak", 5.0)


def example1():
    s = example("example1")
    print("== example 1: two lumpy sellers, one buyer")
    opt = solve_milp(build_dcopf_milp(s))
    print(f"exact clearing welfare {opt.objective:g} with u = "
          f"({opt.value(('u', 's1', 1)):g}, {opt.value(('u', 's2', 1)):g})")
    out = run_markup(s, MarkupConfig(alphas=(1.0,), options=WEAK5, allow_alpha_ge_1=True))
    p1 = out.phase1
    print(f"phase 1 at alpha=1, R=5: u = {p1.u}, seller price {p1.prices[('n1', 1)]:g}")
    print(f"threshold {out.delta:g} keeps only s2: welfare {out.welfare:g}, "
          f"loss {rwl(out.welfare, opt.objective):.2f}%")
    b = out.budget
    print(f"buyer pays {b['buyer_payments']:g}, sellers receive {b['seller_revenue']:g}, "
          f"surplus {b['surplus']:g}, make-whole payments {out.total_mwp:g}")


def example2():
    s = example("example2")
    print("\n== example 2: same sellers, higher inelastic demand")
    p1 = solve_phase1(s, WEAK5.with_alpha(1.0))
    print(f"phase 1: u1 = {p1.u[('s1', 1)]:g}")
    a = residual_clear(s, 1.0, round_threshold(p1.u, 0.8))
    print(f"rounding u1 down leaves s2 producing {a.y[('s2', 1)]:g} MWh, "
          f"{allocation_distance(a, p1.allocation):.2f} away from the phase-1 point")
    u2 = agent_utility(s.seller("s2"), a, {("n1", 1): 5.0})
    print(f"at price 5, s2 earns {u2:g} and needs a make-whole payment of {mwp(u2):g}")


def example3():
    s = example("example3")
    print("\n== example 3: three-node meshed grid")
    for R in (500.0, 0.0):
        status = solve_lp(build_cswmp(s, ClearingOptions("weak", R, alpha=0.1))).status.value
        print(f"convexified problem with auctioneer demand {R:g}: {status}")


if __name__ == "__main__":
    example1()
    example2()
    example3()
