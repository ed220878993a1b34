"""Time the markup mechanism on the 50-node, 24-hour synthetic benchmark.

Run: python demos/desk_scale.py [opt_time_limit_seconds]
Pass 0 to skip the exact solve.
"""

import sys
import time

from markupclear import MarkupConfig, run_markup
from markupclear.bb import MilpConfig, solve_milp
from markupclear.formulation import build_dcopf_milp
from markupclear.synthetic import performance_scenario


def main(limit=60.0):
    s = performance_scenario(0)
    print(f"{len(s.network.nodes)} nodes, {len(s.network.lines)} lines, {len(s.sellers)} sellers, "
          f"{len(s.buyers)} buyers, {s.horizon} periods")
    t0 = time.perf_counter()
    out = run_markup(s, MarkupConfig())
    print(f"markup: {time.perf_counter() - t0:.2f}s, alpha={out.alpha:g}, delta={out.delta:g}, "
          f"welfare {out.welfare:,.2f}, MWPs {out.total_mwp:,.2f}, stages {out.timings}")
    if limit > 0:
        t0 = time.perf_counter()
        res = solve_milp(build_dcopf_milp(s), MilpConfig(gap_tol=1e-4, time_limit=limit))
        bound = f"bound {res.bound:,.2f}"
        inc = f"incumbent {res.objective:,.2f}" if res.has_incumbent else "no incumbent"
        print(f"exact: {time.perf_counter() - t0:.2f}s, {res.status.value}, {res.nodes} nodes, {inc}, {bound}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 60.0)
