"""Clearing engine for non-convex day-ahead electricity markets.

The markup mechanism charges buyers (1 + alpha) times the nodal prices of a
convexified market and pays sellers those prices, after rounding the relaxed
commitments. See the README for a walk-through.
"""

__version__ = "0.1.0"

from .bb import MilpConfig, MilpSolution, MilpStatus, fix_binaries, solve_milp
from .formulation import (ClearingOptions, ProblemInstance, build_cswmp, build_dcopf_milp, build_rc_delta,
                          build_rc_milp)
from .lp import LpParams, LpSolution, LpStatus, check_optimality, duals_by_tag, solve_lp
from .markup import (InfeasibleClearing, MarkupConfig, MarkupOutcome, NoFeasibleMarkup, Pseudoequilibrium,
                     milp_round, residual_clear, round_threshold, run_markup, search_delta, solve_phase1)
from .metrics import (Allocation, ClearingReport, agent_utility, budget_and_oversupply, gloc, ip_prices, mwp, rwl,
                      welfare)
from .scenario import Scenario, load_scenario, parse_scenario, save_scenario

__all__ = [
    "Allocation", "ClearingOptions", "ClearingReport", "InfeasibleClearing", "LpParams", "LpSolution", "LpStatus",
    "MarkupConfig", "MarkupOutcome", "MilpConfig", "MilpSolution", "MilpStatus", "NoFeasibleMarkup",
    "ProblemInstance", "Pseudoequilibrium", "Scenario", "agent_utility", "budget_and_oversupply", "build_cswmp",
    "build_dcopf_milp", "build_rc_delta", "build_rc_milp", "check_optimality", "duals_by_tag", "fix_binaries",
    "gloc", "ip_prices", "load_scenario", "milp_round", "mwp", "parse_scenario", "residual_clear",
    "round_threshold", "run_markup", "rwl", "save_scenario", "search_delta", "solve_lp", "solve_milp",
    "solve_phase1", "welfare",
]
