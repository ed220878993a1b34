import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from markupclear.bb import fix_binaries
from markupclear.formulation import ClearingOptions
from markupclear.synthetic import example


@pytest.fixture(scope="session")
def ex1():
    return example("example1")


@pytest.fixture(scope="session")
def ex2():
    return example("example2")


@pytest.fixture(scope="session")
def ex3():
    return example("example3")


@pytest.fixture(scope="session")
def weak5():
    return ClearingOptions("weak", 5.0)


def scipy_lp_value(inst):
    """Optimal value of a ProblemInstance through scipy's HiGHS, or None if infeasible."""
    A = inst.A.toarray()
    le, ge, eq = inst.senses == "<", inst.senses == ">", inst.senses == "="
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([inst.rhs[le], -inst.rhs[ge]])
    res = linprog(-inst.objective, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=inst.rhs[eq] if eq.any() else None,
                  bounds=list(zip(inst.lb, inst.ub)), method="highs")
    if res.status == 2:
        return None
    assert res.status == 0, res.message
    return -res.fun


def enumerate_milp(inst):
    """Best objective over every 0/1 pattern of the binaries, each LP solved by scipy."""
    cols = inst.binaries
    best = None
    for pattern in itertools.product((0.0, 1.0), repeat=len(cols)):
        vec = inst.lb.copy()
        vec[cols] = pattern
        val = scipy_lp_value(fix_binaries(inst, vec))
        if val is not None and (best is None or val > best):
            best = val
    return best


def vertex_lp_value(A, senses, b, c, x_hi, chunk=40000):
    """Maximize c.x over {A x (senses) b, 0 <= x <= x_hi} by enumerating vertices.

    Every vertex solves n linearly independent active constraints (bounds
    included); all n-subsets are solved in batches and filtered for
    feasibility. Returns None when the polytope is empty.
    """
    m, n = A.shape
    C = np.vstack([A, np.eye(n), np.eye(n)])
    d = np.concatenate([b, np.zeros(n), x_hi])
    combos = np.array(list(itertools.combinations(range(m + 2 * n), n)), dtype=np.int64).reshape(-1, n)
    best = None
    for start in range(0, len(combos), chunk):
        idx = combos[start:start + chunk]
        M = C[idx]
        r = d[idx]
        good = np.abs(np.linalg.det(M)) > 1e-10
        if not good.any():
            continue
        x = np.linalg.solve(M[good], r[good][..., None])[..., 0]
        feas = _feasible(A, senses, b, x_hi, x)
        if feas.any():
            val = float((x[feas] @ c).max())
            best = val if best is None else max(best, val)
    return best


def _feasible(A, senses, b, x_hi, x, tol=1e-9):
    act = x @ A.T
    ok = np.all(x >= -tol, axis=1) & np.all(x <= x_hi + tol, axis=1)
    le, ge, eq = senses == "<", senses == ">", senses == "="
    ok &= np.all(act[:, le] <= b[le] + tol, axis=1)
    ok &= np.all(act[:, ge] >= b[ge] - tol, axis=1)
    ok &= np.all(np.abs(act[:, eq] - b[eq]) <= tol, axis=1)
    return ok


def make_lp(A, senses, b, c, lb, ub):
    import scipy.sparse as sp

    from markupclear.formulation import ProblemInstance, VariableIndex

    n = len(c)
    return ProblemInstance(VariableIndex([("v", j) for j in range(n)]), np.asarray(c, float),
                           np.asarray(lb, float), np.asarray(ub, float), np.zeros(n, np.int8),
                           sp.csr_matrix(np.asarray(A, float)), np.asarray(senses), np.asarray(b, float),
                           tuple(("r", i) for i in range(len(b))))


def random_box_lp(rng, max_n=8, max_m=8):
    """Random LP on a finite box [0, hi] so the vertex oracle applies."""
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    senses = rng.choice(np.array(["<", ">", "="]), size=m, p=[0.55, 0.3, 0.15])
    x0 = rng.uniform(0, 3, size=n)
    # feasible about two times in three: rhs built around a known point
    slack = rng.uniform(-2, 3, size=m)
    b = np.round(A @ x0 + np.where(senses == "<", slack, np.where(senses == ">", -slack, 0)), 3)
    c = rng.integers(-5, 6, size=n).astype(float)
    hi = rng.integers(1, 7, size=n).astype(float)
    return A, senses, b, c, hi


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
