import numpy as np
import pytest

from artifact.bnb import brute_force_oracle
from artifact.follower import best_response_provider, best_response_traveler, traveler_cost
from artifact.instgen import example1
from artifact.model import EffectKind, MarketInstance, NetworkEffect, TravelerBid
from artifact.reform import (PROVIDER, TRAVELER, FixedSets, augment_sd, build_hpr, build_mpec,
                             build_subproblem, dual_coefficients, follower_kkt_point,
                             kkt_stationarity_residual, response_breakpoints)
from artifact.subsolver import MixedProgram, Status, solve, solve_lp

from conftest import small_case


def _rows_violation(prog: MixedProgram, x, first_row, first_quad, var_ids):
    worst = 0.0
    for j in var_ids:
        v = prog.variables[j]
        worst = max(worst, v.lower - x[j], x[j] - v.upper)
    for c in prog.constraints[first_row:]:
        act = sum(a * x[j] for j, a in c.coeffs.items())
        gap = {"<=": act - c.rhs, ">=": c.rhs - act, "=": abs(act - c.rhs)}[c.relation]
        worst = max(worst, gap)
    for qc in prog.quad_constraints[first_quad:]:
        worst = max(worst, qc.value(x))
    return worst


def test_hpr_example1_root_value():
    prog, _ = build_hpr(example1())
    out = solve(prog)
    assert out.status == Status.OPTIMAL
    assert out.objective == pytest.approx(20.44, abs=0.01)


def test_hpr_of_empty_market_is_zero():
    e = example1()
    empty = MarketInstance.build(e.modes, (), (), e.effect, p_range=(1, 2), q_range=(1, 2))
    out = solve(build_hpr(empty)[0])
    assert out.status == Status.OPTIMAL and out.objective == pytest.approx(0.0)


def test_dual_coefficients_example():
    bid = TravelerBid(1, 40.0, 160.0, 2.0, 20.0, 50.0, 200.0, 2.5, 2.0)
    eff = NetworkEffect(EffectKind.QUADRATIC, 0.01, -0.2, 10.0, 0.01, 0.0, 1.0)
    dc = dual_coefficients(bid, eff)
    assert dc.A == pytest.approx(20.0)
    assert dc.P == pytest.approx(4.0)
    # U(gap) = U_const + U_delta * gap
    assert dc.U_const == pytest.approx(-9.0)
    assert dc.U_delta == pytest.approx(0.4)


def test_dual_coefficients_free_bid_and_flat_effect():
    bid = TravelerBid(1, 40.0, 160.0, 0.0, 20.0, 50.0, 200.0, 2.5, 2.0)
    assert dual_coefficients(bid, example1().effect).A == 0.0
    flat = NetworkEffect(EffectKind.QUADRATIC, 0.0, -0.2, 10.0, 0.01, 0.0, 1.0)
    with pytest.raises(ValueError):
        dual_coefficients(bid, flat)


def test_sd_requires_accepted_follower():
    inst = example1()
    prog, layout = build_hpr(inst)
    with pytest.raises(ValueError):
        augment_sd(prog, layout, inst, 0, TRAVELER, FixedSets())


def test_linear_sd_adds_two_variables_two_rows():
    inst = example1()
    fixed = FixedSets(trav_fixed1=frozenset({0}))
    prog, layout = build_hpr(inst, fixed)
    nv, nr = prog.n_vars, len(prog.constraints)
    augment_sd(prog, layout, inst, 0, TRAVELER, fixed)
    assert prog.n_vars - nv == 2 and len(prog.constraints) - nr == 2
    assert not prog.quad_constraints


def test_quadratic_sd_emissions():
    inst = example1("quadratic")
    fixed = FixedSets(prov_fixed1=frozenset({0}))
    prog, layout = build_hpr(inst, fixed)
    nv, nr = prog.n_vars, len(prog.constraints)
    added = augment_sd(prog, layout, inst, 0, PROVIDER, fixed)
    # three multipliers, the gap-level product, the dual residual and two square epigraphs
    assert set(added) == {"lam1", "lam2", "lam3", "W", "e", "sq_level", "sq_dual"}
    assert prog.n_vars - nv == 7
    # four McCormick rows, the residual definition and the value row
    assert len(prog.constraints) - nr == 6
    assert len(prog.quad_constraints) == 2
    assert prog.non_psd() == []


def _sd_point(inst, side, idx, fixed, delta):
    prog, layout = build_hpr(inst, fixed)
    nr, nq, nv = len(prog.constraints), len(prog.quad_constraints), prog.n_vars
    added = augment_sd(prog, layout, inst, idx, side, fixed)
    bid = inst.travelers[idx] if side == TRAVELER else inst.providers[idx]
    if side == TRAVELER:
        level = best_response_traveler(bid, 1, delta, inst.effect).level
        col = int(layout.x[idx])
    else:
        level = best_response_provider(bid, 1, delta, inst.effect).level
        col = int(layout.y[idx])
    kkt = follower_kkt_point(inst, side, idx, level, 1.0, delta)
    dc = dual_coefficients(bid, inst.effect)
    x = np.zeros(prog.n_vars)
    x[col] = level
    x[layout.delta] = delta
    x[added["lam1"]], x[added["lam2"]] = kkt["lam1"], kkt["lam2"]
    if "lam3" in added:
        x[added["lam3"]] = kkt["lam3"]
        x[added["W"]] = delta * level
        e = dc.A * kkt["lam1"] + kkt["lam2"] - kkt["lam3"] + dc.U_const + dc.U_delta * delta
        x[added["e"]] = e
        x[added["sq_level"]] = 0.5 * dc.P * level ** 2
        x[added["sq_dual"]] = e * e / (2 * dc.P)
    return prog, x, nr, nq, list(range(nv, prog.n_vars)) + [col, layout.delta]


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_exact_response_with_constructed_duals_is_sd_feasible(kind):
    for s in range(10):
        inst = small_case(s, kind)
        lo, hi = inst.bounds.gap_lower, inst.bounds.gap_upper
        for delta in np.linspace(lo, hi, 7):
            for side, n in ((TRAVELER, len(inst.travelers)), (PROVIDER, len(inst.providers))):
                for idx in range(n):
                    fixed = (FixedSets(trav_fixed1=frozenset({idx})) if side == TRAVELER
                             else FixedSets(prov_fixed1=frozenset({idx})))
                    prog, x, nr, nq, cols = _sd_point(inst, side, idx, fixed, float(delta))
                    assert _rows_violation(prog, x, nr, nq, cols) <= 1e-7, (s, side, idx, delta)


def test_linear_sd_pins_traveler_cost():
    for s in range(5):
        inst = small_case(s, "linear")
        fixed = FixedSets(trav_fixed1=frozenset({0}))
        prog, layout = build_subproblem(inst, fixed)
        best = best_response_traveler(inst.travelers[0], 1, 0.0, inst.effect).objective
        for sign in (1.0, -1.0):
            prog.set_objective({int(layout.x[0]): sign})
            out = solve(prog)
            if out.status != Status.OPTIMAL:
                continue
            dec = layout.decision(out.point)
            cost = traveler_cost(inst.travelers[0], dec.x[0], dec.delta, inst.effect)
            assert cost == pytest.approx(best, abs=1e-6)


def test_mccormick_exact_at_box_corners():
    inst = example1("quadratic")
    fixed = FixedSets(prov_fixed1=frozenset({0}), delta_lo=2.0, delta_hi=9.0)
    prog, layout = build_hpr(inst, fixed)
    added = augment_sd(prog, layout, inst, 0, PROVIDER, fixed)
    y, d, W = int(layout.y[0]), layout.delta, added["W"]
    keep = [c for c in prog.constraints if c.name.startswith("mc")]
    for level, gap in ((0.0, 5.0), (1.0, 5.0), (0.4, 2.0), (0.4, 9.0)):
        vals = []
        for sense in (1.0, -1.0):
            p = MixedProgram()
            for v in prog.variables:
                p.add_var(v.name, v.lower, v.upper)
            p.set_bounds(y, level, level)
            p.set_bounds(d, gap, gap)
            for c in keep:
                p.add_constraint(c.coeffs, c.relation, c.rhs)
            p.set_objective({W: sense})
            vals.append(sense * solve_lp(p).objective)
        assert vals[0] == pytest.approx(gap * level, abs=1e-6)
        assert vals[1] == pytest.approx(gap * level, abs=1e-6)


def test_response_pin_only_without_interior_breakpoint():
    inst = example1("quadratic")
    # provider 11's breakpoints are at -50/3 and 25 - 50/3
    bps = response_breakpoints(inst, PROVIDER, 0)
    assert bps == pytest.approx((-50 / 3, 25 - 50 / 3))
    _, layout = build_subproblem(inst, FixedSets(prov_fixed1=frozenset({0})))
    assert (PROVIDER, 0) not in layout.extra["pinned"]
    _, layout = build_subproblem(inst, FixedSets(prov_fixed1=frozenset({0}), delta_hi=8.0))
    assert (PROVIDER, 0) in layout.extra["pinned"]
    assert response_breakpoints(example1(), PROVIDER, 0) == ()


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_relaxation_ordering(kind):
    for s in range(6):
        inst = small_case(s, kind)
        hpr = solve(build_hpr(inst)[0]).objective
        lb = brute_force_oracle(inst).lb_value
        fixed = FixedSets(trav_fixed1=frozenset({0}), prov_fixed1=frozenset({0}))
        out = solve(build_subproblem(inst, fixed)[0])
        assert out.status in (Status.OPTIMAL, Status.INFEASIBLE)
        if out.status == Status.OPTIMAL:
            assert out.objective <= hpr + 1e-6
        assert lb <= hpr + 1e-6


def test_mpec_pair_count_and_root_bound():
    for s in range(4):
        inst = small_case(s, "linear")
        prog, layout, pairs = build_mpec(inst)
        assert len(pairs) == 4 * (len(inst.travelers) + len(inst.providers))
        out = solve(prog)
        assert out.objective >= brute_force_oracle(inst).lb_value - 1e-6


def _kkt_vector(inst, layout, prog, side, idx, delta):
    kk = next(k for k in layout.extra["kkt"] if k.side == side and k.idx == idx)
    bid = inst.travelers[idx] if side == TRAVELER else inst.providers[idx]
    resp = (best_response_traveler if side == TRAVELER else best_response_provider)(
        bid, 1, delta, inst.effect)
    pt = follower_kkt_point(inst, side, idx, resp.level, 1.0, delta)
    x = np.zeros(prog.n_vars)
    x[layout.delta] = delta
    x[kk.level] = resp.level
    x[kk.budget_slack], x[kk.upper_slack] = pt["budget_slack"], pt["upper_slack"]
    x[kk.lam1], x[kk.lam2], x[kk.lam3], x[kk.stat_slack] = pt["lam1"], pt["lam2"], pt["lam3"], pt["stat"]
    return x, kk


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_kkt_residual_zero_at_exact_point_and_positive_when_perturbed(kind):
    inst = example1(kind)
    prog, layout, _ = build_mpec(inst)
    rng = np.random.default_rng(0)
    for side in (TRAVELER, PROVIDER):
        for delta in (0.0, 4.0, 20.0):
            x, kk = _kkt_vector(inst, layout, prog, side, 0, delta)
            pos = [k.side == side and k.idx == 0 for k in layout.extra["kkt"]].index(True)
            assert kkt_stationarity_residual(inst, x, layout)[pos] == pytest.approx(0.0, abs=1e-12)
            x[kk.lam1] += rng.uniform(0.1, 1.0)
            assert kkt_stationarity_residual(inst, x, layout)[pos] > 0
