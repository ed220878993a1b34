"""IP pricing versus the markup mechanism on seeded random markets.

Run: python demos/pricing_comparison.py [n_scenarios]
"""

import sys

from markupclear import MarkupConfig, run_markup
from markupclear.bb import MilpStatus, solve_milp
from markupclear.formulation import build_dcopf_milp
from markupclear.markup import InfeasibleClearing, NoFeasibleMarkup
from markupclear.metrics import Allocation, budget_and_oversupply, ip_prices, rwl, seller_mwps
from markupclear.synthetic import random_scenario


def main(n=40):
    rows = []
    for seed in range(n):
        s = random_scenario(seed)
        res = solve_milp(build_dcopf_milp(s))
        if res.status != MilpStatus.OPTIMAL:
            continue
        opt = Allocation.from_vector(res.instance, res.primal)
        prices = ip_prices(s, opt)
        mwps = seller_mwps(s, opt, prices)
        ip_deficit, _ = budget_and_oversupply(s, opt, prices, 0.0, mwps)
        try:
            out = run_markup(s, MarkupConfig())
        except (NoFeasibleMarkup, InfeasibleClearing):
            rows.append((seed, res.objective, sum(mwps.values()), ip_deficit, None))
            continue
        rows.append((seed, res.objective, sum(mwps.values()), ip_deficit, out))

    print(f"{'seed':>4} {'W_opt':>10} {'IP MWP':>9} {'IP deficit':>10} {'alpha':>6} {'RWL %':>7} {'MK MWP':>8} "
          f"{'MK deficit':>10}")
    for seed, w, ip_mwp, ip_def, out in rows:
        if out is None:
            print(f"{seed:>4} {w:>10.2f} {ip_mwp:>9.2f} {ip_def:>10.2f}   no markup balanced the budget")
            continue
        loss = rwl(out.welfare, w) if w else float("nan")
        print(f"{seed:>4} {w:>10.2f} {ip_mwp:>9.2f} {ip_def:>10.2f} {out.alpha:>6g} {loss:>7.2f} "
              f"{out.total_mwp:>8.2f} {out.budget_deficit:>10.2f}")
    done = [r for r in rows if r[4] is not None]
    fewer = sum(r[4].total_mwp <= r[2] + 1e-6 for r in done)
    print(f"\nmarkup pays no more make-whole than IP pricing on {fewer}/{len(done)} markets")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 40)
