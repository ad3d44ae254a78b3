import math

import numpy as np
import pytest
from scipy.optimize import linprog

from artifact import _lpengine
from artifact.subsolver import (BINARY, MixedProgram, SolverOptions, Status, solve, solve_lp,
                                solve_miconvex, solve_milp)


def _prog(objective, bounds, rows, kinds=None):
    p = MixedProgram("t")
    for j, (lo, hi) in enumerate(bounds):
        p.add_var(f"x{j}", lo, hi, (kinds or {}).get(j, "continuous"))
    for coeffs, rel, rhs in rows:
        p.add_constraint(coeffs, rel, rhs)
    p.set_objective(objective)
    return p


def test_lp_examples():
    out = solve_lp(_prog({0: 1}, [(0, 10)], [({0: 1}, "<=", 5)]))
    assert out.status == Status.OPTIMAL and out.objective == pytest.approx(5)
    out = solve_lp(_prog({0: 1, 1: 1}, [(0, 10), (0, 10)],
                         [({0: 1, 1: 2}, "<=", 4), ({0: 3, 1: 1}, "<=", 6)]))
    assert out.objective == pytest.approx(14 / 5)
    assert out.point == pytest.approx([8 / 5, 6 / 5])
    out = solve_lp(_prog({0: 1}, [(0, 10)], [({0: 1}, ">=", 2), ({0: 1}, "<=", 1)]))
    assert out.status == Status.INFEASIBLE


def test_lp_unbounded_detected():
    out = solve_lp(_prog({0: 1}, [(0, math.inf)], [({0: -1}, "<=", 0)]))
    assert out.status == Status.UNBOUNDED


def test_lp_duals_are_max_sensitivities():
    out = solve_lp(_prog({0: 1, 1: 1}, [(0, 10), (0, 10)],
                         [({0: 1, 1: 2}, "<=", 4), ({0: 3, 1: 1}, "<=", 6)]))
    # perturbing each rhs by h moves the optimum by dual * h
    for i, rhs in enumerate((4, 6)):
        rows = [({0: 1, 1: 2}, "<=", 4), ({0: 3, 1: 1}, "<=", 6)]
        rows[i] = (rows[i][0], "<=", rhs + 1e-4)
        bumped = solve_lp(_prog({0: 1, 1: 1}, [(0, 10), (0, 10)], rows)).objective
        assert out.duals[i] == pytest.approx((bumped - out.objective) / 1e-4, rel=1e-6)


@pytest.mark.parametrize("kernel", ["compiled", "python"])
def test_lp_matches_highs(kernel):
    if kernel == "compiled":
        pytest.importorskip("artifact._dualsimplex")
    rng = np.random.default_rng(11)
    for _ in range(150):
        m, n = rng.integers(1, 15), rng.integers(1, 15)
        A = rng.normal(size=(m, n)).round(2)
        A[rng.random((m, n)) < 0.3] = 0
        c = rng.normal(size=n).round(2)
        lo = rng.uniform(-5, 0, n).round(1)
        hi = lo + rng.uniform(0, 10, n).round(1)
        rel = rng.choice(["<=", ">=", "="], size=m, p=[0.45, 0.45, 0.1])
        b = A @ rng.uniform(lo, hi) + np.where(rel == "<=", 1, np.where(rel == ">=", -1, 0)) \
            * rng.uniform(-1, 2, m)
        p = _prog({j: c[j] for j in range(n)}, list(zip(lo, hi)),
                  [({j: A[i, j] for j in range(n)}, rel[i], b[i]) for i in range(m)])
        out = solve_lp(p, SolverOptions(kernel=kernel))
        le, ge, eq = rel == "<=", rel == ">=", rel == "="
        a_ub = np.vstack([A[le], -A[ge]])
        ref = linprog(-c, A_ub=a_ub if len(a_ub) else None,
                      b_ub=np.concatenate([b[le], -b[ge]]) if len(a_ub) else None,
                      A_eq=A[eq] if eq.any() else None, b_eq=b[eq] if eq.any() else None,
                      bounds=list(zip(lo, hi)), method="highs")
        if ref.status == 2:
            assert out.status == Status.INFEASIBLE
        else:
            assert out.status == Status.OPTIMAL
            assert out.objective == pytest.approx(-ref.fun, rel=1e-6, abs=1e-6)
            assert p.max_violation(out.point) <= 1e-6


def test_milp_examples():
    p = _prog({0: 3, 1: 2}, [(0, 1), (0, 1)], [({0: 1, 1: 1}, "<=", 1)], {0: BINARY, 1: BINARY})
    out = solve_milp(p)
    assert out.objective == pytest.approx(3) and out.point == pytest.approx([1, 0])
    p = _prog({0: 1}, [(0, 1)], [({0: 1}, ">=", 0.5), ({0: 1}, "<=", 0.4)], {0: BINARY})
    assert solve_milp(p).status == Status.INFEASIBLE


def test_milp_with_fixed_binaries_equals_lp():
    rows = [({0: 1, 1: 1, 2: 1}, "<=", 2.5), ({0: 2, 2: -1}, ">=", -1)]
    p = _prog({0: 1, 1: 2, 2: 1.5}, [(1, 1), (0, 0), (0, 3)], rows, {0: BINARY, 1: BINARY})
    q = _prog({0: 1, 1: 2, 2: 1.5}, [(1, 1), (0, 0), (0, 3)], rows)
    assert solve_milp(p).objective == pytest.approx(solve_lp(q).objective)


def test_oa_examples():
    p = _prog({0: 1}, [(0, 10)], [])
    p.add_quad({(0, 0): 1.0}, {}, 4.0)
    assert solve_miconvex(p).objective == pytest.approx(2.0, abs=1e-6)
    p = _prog({0: 1, 1: 1}, [(0, 2), (0, 2)], [])
    p.add_quad({(0, 0): 1.0, (1, 1): 1.0}, {}, 1.0)
    out = solve_miconvex(p)
    assert out.objective == pytest.approx(math.sqrt(2), abs=1e-6)
    # the objective is flat along the circle, so the point is only O(sqrt(tol)) exact
    assert out.point == pytest.approx([math.sqrt(0.5)] * 2, abs=1e-3)


def test_oa_starts_from_unbounded_relaxation():
    p = _prog({0: 2, 1: 1}, [(0, math.inf), (0, math.inf)], [])
    p.add_quad({(0, 0): 1.0, (1, 1): 1.0}, {}, 1.0)
    out = solve_miconvex(p)
    assert out.status == Status.OPTIMAL
    assert out.objective == pytest.approx(math.sqrt(5), abs=1e-6)
    # without the quadratic row the same program stays unbounded
    assert solve_miconvex(_prog({0: 2, 1: 1}, [(0, math.inf), (0, math.inf)], [])).status \
        == Status.UNBOUNDED


def test_non_psd_rejected():
    p = _prog({0: 1}, [(0, 1), (0, 1)], [])
    p.add_quad({(0, 1): 1.0}, {}, 1.0)
    with pytest.raises(ValueError):
        solve_miconvex(p)


def test_oa_cuts_never_remove_feasible_points():
    p = _prog({0: 2, 1: 1}, [(0, 5), (0, 5)], [])
    p.add_quad({(0, 0): 1.0, (1, 1): 1.0}, {}, 1.0)
    q = p.quad_constraints[0]
    rng = np.random.default_rng(0)
    cuts = [q.cut(rng.uniform(0, 3, 2)) for _ in range(50)]
    r = np.sqrt(rng.uniform(0, 1, 10_000))
    th = rng.uniform(0, np.pi / 2, 10_000)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    for coeffs, rhs in cuts:
        lhs = sum(c * pts[:, j] for j, c in coeffs.items())
        assert np.all(lhs <= rhs + 1e-9)


def test_adding_cuts_never_raises_the_bound():
    p = _prog({0: 2, 1: 1}, [(0, 5), (0, 5)], [])
    p.add_quad({(0, 0): 1.0, (1, 1): 1.0}, {}, 1.0)
    q = p.quad_constraints[0]
    lin = _prog({0: 2, 1: 1}, [(0, 5), (0, 5)], [])
    prev = solve_lp(lin).objective
    for _ in range(15):
        out = solve_lp(lin)
        assert out.objective <= prev + 1e-9
        prev = out.objective
        coeffs, rhs = q.cut(out.point)
        lin.add_constraint(coeffs, "<=", rhs)
    assert prev == pytest.approx(math.sqrt(5), abs=1e-2)


def test_solve_dispatches_on_content():
    assert solve(_prog({0: 1}, [(0, 3)], [])).objective == pytest.approx(3)
    p = _prog({0: 1, 1: 1}, [(0, 1), (0, 2.5)], [({0: 1, 1: 1}, "<=", 3)], {0: BINARY})
    assert solve(p).objective == pytest.approx(3)


def test_dump_is_deterministic_and_readable():
    p = _prog({0: 1, 1: -2}, [(0, 1), (-1, math.inf)], [({0: 1, 1: 1}, "<=", 4)], {0: BINARY})
    p.add_quad({(1, 1): 1.0}, {0: -1.0}, 2.0, "disk")
    text = p.dumps()
    assert text == p.copy().dumps()
    for header in ("maximize", "subject to", "quadratic", "bounds", "binaries", "end"):
        assert header in text
    assert "inf" in text


def test_kernel_flag_recorded():
    assert _lpengine.KERNEL in ("compiled", "python")
