"""Single-level programs built from a market instance.

* ``build_hpr``: leader constraints plus follower primal feasibility.
* ``augment_sd``: strong-duality rows pinning one accepted follower to its optimum.
* ``build_subproblem``: HPR plus SD rows for every follower fixed to accept.
* ``build_mpec``: HPR plus follower KKT systems with complementarity relaxed.

Variable order in the HPR is p, q, l[i,m], u[i], x[i], w[mn], y[mn], delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .follower import (provider_stationary_gap, provider_upper, traveler_stationary_gap,
                       traveler_upper)
from .model import EffectKind, LeaderDecision, MarketInstance, ProviderBid, TravelerBid
from .subsolver import BINARY, MixedProgram

TRAVELER = "traveler"
PROVIDER = "provider"


@dataclass(frozen=True)
class FixedSets:
    trav_fixed0: frozenset = frozenset()
    trav_fixed1: frozenset = frozenset()
    prov_fixed0: frozenset = frozenset()
    prov_fixed1: frozenset = frozenset()
    # optional narrowing of the gap box, used by spatial branching
    delta_lo: float | None = None
    delta_hi: float | None = None

    def __post_init__(self):
        if self.trav_fixed0 & self.trav_fixed1:
            raise ValueError(f"travelers fixed both ways: {set(self.trav_fixed0 & self.trav_fixed1)}")
        if self.prov_fixed0 & self.prov_fixed1:
            raise ValueError(f"providers fixed both ways: {set(self.prov_fixed0 & self.prov_fixed1)}")

    def fix(self, side: str, idx: int, value: int) -> "FixedSets":
        if side == TRAVELER:
            key = "trav_fixed1" if value else "trav_fixed0"
        else:
            key = "prov_fixed1" if value else "prov_fixed0"
        return replace(self, **{key: getattr(self, key) | {idx}})

    def narrow(self, lo: float | None, hi: float | None) -> "FixedSets":
        return replace(self, delta_lo=lo, delta_hi=hi)

    def decided(self, side: str, idx: int) -> bool:
        if side == TRAVELER:
            return idx in self.trav_fixed0 or idx in self.trav_fixed1
        return idx in self.prov_fixed0 or idx in self.prov_fixed1

    def gap_box(self, inst: MarketInstance) -> tuple[float, float]:
        lo, hi = inst.bounds.gap_lower, inst.bounds.gap_upper
        if self.delta_lo is not None:
            lo = max(lo, self.delta_lo)
        if self.delta_hi is not None:
            hi = min(hi, self.delta_hi)
        return lo, hi

    def describe(self) -> dict:
        out = {"trav0": sorted(self.trav_fixed0), "trav1": sorted(self.trav_fixed1),
               "prov0": sorted(self.prov_fixed0), "prov1": sorted(self.prov_fixed1)}
        if self.delta_lo is not None or self.delta_hi is not None:
            out["delta"] = [self.delta_lo, self.delta_hi]
        return out


@dataclass
class Layout:
    """Variable indices of the leader decision inside a program."""

    p: int
    q: int
    l: np.ndarray
    u: np.ndarray
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    delta: int
    extra: dict = field(default_factory=dict)

    def decision(self, point) -> LeaderDecision:
        pt = np.asarray(point, dtype=float)
        return LeaderDecision(float(pt[self.p]), float(pt[self.q]), pt[self.u].copy(),
                              pt[self.w].copy(), pt[self.l].copy() if self.l.size else
                              np.zeros(self.l.shape), float(pt[self.delta]), pt[self.x].copy(),
                              pt[self.y].copy())


@dataclass(frozen=True)
class DualCoefficients:
    """Follower objective (to minimise) is (P/2) v^2 + (U_const + U_delta*gap) v + const,
    subject to A v <= B and 0 <= v <= 1."""

    A: float
    B: float
    U_const: float
    U_delta: float
    P: float


def _tname(i):
    return f"t{i + 1}"


def _pname(pb: ProviderBid):
    return f"s{pb.mode_id}_{pb.provider_id}"


# -- high-point relaxation ------------------------------------------------
def build_hpr(inst: MarketInstance, fixed: FixedSets | None = None,
              model: EffectKind | str | None = None) -> tuple[MixedProgram, Layout]:
    fixed = fixed or FixedSets()
    trav, prov, modes = inst.travelers, inst.providers, inst.modes
    nI, nM, nP = len(trav), len(modes), len(prov)
    b = inst.bounds
    prog = MixedProgram(inst.name or "hpr")

    p = prog.add_var("p", b.p_min, b.p_max)
    q = prog.add_var("q", b.q_min, b.q_max)
    l = np.zeros((nI, nM), dtype=int)
    for i, t in enumerate(trav):
        for k, md in enumerate(modes):
            l[i, k] = prog.add_var(f"l[{_tname(i)},{md.mode_id}]", 0.0,
                                   t.service_time + t.delay_budget)
    u = np.array([_binary(prog, f"u[{_tname(i)}]", i in fixed.trav_fixed0, i in fixed.trav_fixed1)
                  for i in range(nI)], dtype=int)
    x = np.array([prog.add_var(f"x[{_tname(i)}]", 0.0, 1.0) for i in range(nI)], dtype=int)
    w = np.array([_binary(prog, f"w[{_pname(pb)}]", k in fixed.prov_fixed0, k in fixed.prov_fixed1)
                  for k, pb in enumerate(prov)], dtype=int)
    y = np.array([prog.add_var(f"y[{_pname(pb)}]", 0.0, 1.0) for pb in prov], dtype=int)
    dlo, dhi = fixed.gap_box(inst)
    delta = prog.add_var("delta", dlo, dhi)
    layout = Layout(p, q, l, u, x, w, y, delta)

    for i, t in enumerate(trav):
        nm = _tname(i)
        Q = t.quantity
        # bundle covers the distance, within time and inconvenience budgets
        row = {int(l[i, k]): md.speed for k, md in enumerate(modes)}
        row[int(x[i])] = -t.distance
        prog.add_constraint(row, "=", 0.0, f"distance[{nm}]")
        row = {int(l[i, k]): 1.0 for k in range(nM)}
        row[int(x[i])] = -t.service_time
        prog.add_constraint(row, ">=", 0.0, f"time_min[{nm}]")
        prog.add_constraint(dict(row), "<=", t.delay_budget, f"time_max[{nm}]")
        prog.add_constraint({int(l[i, k]): md.sigma for k, md in enumerate(modes)}, "<=",
                            t.inconvenience_tolerance, f"inconvenience[{nm}]")
        # accept iff p <= b
        prog.add_constraint({p: 1.0, int(u[i]): -(t.bid_price - b.p_max)}, "<=", b.p_max,
                            f"accept_hi[{nm}]")
        prog.add_constraint({p: 1.0, int(u[i]): t.bid_price - b.p_min}, ">=", t.bid_price,
                            f"accept_lo[{nm}]")
        prog.add_constraint({int(x[i]): t.bid_price * Q}, "<=", t.budget, f"budget[{nm}]")
        prog.add_constraint({int(x[i]): 1.0, int(u[i]): -1.0}, "<=", 0.0, f"link[{nm}]")

    for k, md in enumerate(modes):
        row = {int(l[i, k]): md.speed ** 2 for i in range(nI)}
        for n, pb in enumerate(prov):
            if pb.mode_id == md.mode_id:
                row[int(y[n])] = row.get(int(y[n]), 0.0) - pb.capacity
        prog.add_constraint(row, "<=", 0.0, f"capacity[{md.mode_id}]")

    for n, pb in enumerate(prov):
        nm = _pname(pb)
        # accept iff q >= beta
        prog.add_constraint({q: 1.0, int(w[n]): b.q_min - pb.sell_price}, ">=", b.q_min,
                            f"supply_lo[{nm}]")
        prog.add_constraint({q: 1.0, int(w[n]): -(b.q_max - pb.sell_price)}, "<=", pb.sell_price,
                            f"supply_hi[{nm}]")
        if pb.operating_cost > 0:
            prog.add_constraint({int(y[n]): pb.capacity * pb.operating_cost}, "<=", pb.budget,
                                f"budget[{nm}]")
        prog.add_constraint({int(y[n]): 1.0, int(w[n]): -1.0}, "<=", 0.0, f"link[{nm}]")

    row = {delta: 1.0}
    for n, pb in enumerate(prov):
        row[int(y[n])] = -pb.capacity
    for i, t in enumerate(trav):
        row[int(x[i])] = t.quantity
    prog.add_constraint(row, "=", 0.0, "gap")

    obj = {int(x[i]): t.bid_price * t.quantity for i, t in enumerate(trav)}
    for n, pb in enumerate(prov):
        obj[int(y[n])] = -pb.sell_price * pb.capacity
    prog.set_objective(obj)
    return prog, layout


def _binary(prog, name, zero, one):
    lo, hi = (0.0, 0.0) if zero else (1.0, 1.0) if one else (0.0, 1.0)
    return prog.add_var(name, lo, hi, BINARY)


# -- dual data --------------------------------------------------------------
def dual_coefficients(bid, effect) -> DualCoefficients:
    """Quadratic-form coefficients of a follower's minimisation problem."""
    if isinstance(bid, TravelerBid):
        Q = bid.quantity
        a = bid.waiting_cost_rate
        P = 2 * a * effect.a2T * Q * Q
        U0 = (bid.bid_price - bid.reserve_price) * Q + a * effect.a1T * Q
        U1 = 2 * a * effect.a2T * Q
        A, B = bid.bid_price * Q, bid.budget
    else:
        C = bid.capacity
        e = bid.idle_cost_rate
        P = 2 * e * effect.a2P * C * C
        U0 = -(bid.sell_price - bid.reserve_price) * C - e * effect.a1P * C
        U1 = -2 * e * effect.a2P * C
        A, B = C * bid.operating_cost, bid.budget
    if effect.is_quadratic and not P > 0:
        raise ValueError(f"follower objective not strictly convex (P = {P})")
    if not effect.is_quadratic:
        P, U1 = 0.0, 0.0
    return DualCoefficients(A, B, U0, U1, P)


def _bid(inst, side, idx):
    return inst.travelers[idx] if side == TRAVELER else inst.providers[idx]


def _level_upper(bid, side) -> float:
    return traveler_upper(bid, 1.0) if side == TRAVELER else provider_upper(bid, 1.0)


def gradient_range(dc: DualCoefficients, ub: float, dlo: float, dhi: float) -> float:
    """max |P v + U(gap)| over v in [0, ub] and gap in [dlo, dhi]."""
    vals = [dc.P * v + dc.U_const + dc.U_delta * d for v in (0.0, ub) for d in (dlo, dhi)]
    return max(abs(v) for v in vals)


def default_lambda_max(inst: MarketInstance) -> float:
    """10 x the largest absolute objective slope across followers over the gap box."""
    lo, hi = inst.bounds.gap_lower, inst.bounds.gap_upper
    best = 0.0
    for side, bids in ((TRAVELER, inst.travelers), (PROVIDER, inst.providers)):
        for bid in bids:
            dc = dual_coefficients(bid, inst.effect)
            best = max(best, gradient_range(dc, 1.0, lo, hi))
    return 10.0 * max(best, 1.0)


def multiplier_caps(dc: DualCoefficients, ub: float, dlo: float, dhi: float,
                    lambda_max: float | None) -> tuple[float, float, float]:
    """Boxes for (budget, upper-bound, lower-bound) multipliers that contain an optimal dual."""
    g = gradient_range(dc, ub, dlo, dhi)
    floor = lambda_max if lambda_max is not None else 0.0
    cap1 = max(g / dc.A, floor) if dc.A > 0 else 0.0
    return cap1, max(g, floor), max(g, floor)


# -- strong-duality rows ----------------------------------------------------
def augment_sd(prog: MixedProgram, layout: Layout, inst: MarketInstance, idx: int, side: str,
               fixed: FixedSets, lambda_max: float | None = None) -> dict:
    """Add dual feasibility and primal <= dual for an accepted follower; returns new indices."""
    accepted = fixed.trav_fixed1 if side == TRAVELER else fixed.prov_fixed1
    if idx not in accepted:
        raise ValueError(f"{side} {idx} is not fixed to accept; strong-duality rows need u = 1")
    bid = _bid(inst, side, idx)
    dc = dual_coefficients(bid, inst.effect)
    level = int(layout.x[idx] if side == TRAVELER else layout.y[idx])
    tag = _tname(idx) if side == TRAVELER else _pname(bid)
    ub = _level_upper(bid, side)
    dlo, dhi = fixed.gap_box(inst)
    cap1, cap2, cap3 = multiplier_caps(dc, ub, dlo, dhi, lambda_max)
    added = {}
    lam1 = prog.add_var(f"lam1[{tag}]", 0.0, cap1)
    lam2 = prog.add_var(f"lam2[{tag}]", 0.0, cap2)
    added.update(lam1=lam1, lam2=lam2)

    if not inst.effect.is_quadratic:
        c = dc.U_const
        prog.add_constraint({level: c, lam1: dc.B, lam2: 1.0}, "<=", 0.0, f"sd_value[{tag}]")
        prog.add_constraint({lam1: dc.A, lam2: 1.0}, ">=", -c, f"sd_dual[{tag}]")
        return added

    lam3 = prog.add_var(f"lam3[{tag}]", 0.0, cap3)
    # W = gap * level under McCormick
    corners = [d * v for d in (dlo, dhi) for v in (0.0, ub)]
    W = prog.add_var(f"W[{tag}]", min(corners), max(corners))
    d = layout.delta
    prog.add_constraint({W: 1.0, level: -dlo}, ">=", 0.0, f"mc1[{tag}]")
    prog.add_constraint({W: 1.0, d: -ub, level: -dhi}, ">=", -ub * dhi, f"mc2[{tag}]")
    prog.add_constraint({W: 1.0, d: -ub, level: -dlo}, "<=", -ub * dlo, f"mc3[{tag}]")
    prog.add_constraint({W: 1.0, level: -dhi}, "<=", 0.0, f"mc4[{tag}]")
    # e = A lam1 + lam2 - lam3 + U(gap), the dual residual inside the completed square
    e_vals = [dc.A * a1 + a2 - a3 + dc.U_const + dc.U_delta * g
              for a1 in (0.0, cap1) for a2 in (0.0, cap2) for a3 in (0.0, cap3) for g in (dlo, dhi)]
    e = prog.add_var(f"e[{tag}]", min(e_vals), max(e_vals))
    prog.add_constraint({e: 1.0, lam1: -dc.A, lam2: -1.0, lam3: 1.0, d: -dc.U_delta}, "=",
                        dc.U_const, f"dual_residual[{tag}]")
    t1 = prog.add_var(f"sq_level[{tag}]", 0.0, 0.5 * dc.P * ub * ub)
    t2 = prog.add_var(f"sq_dual[{tag}]", 0.0, max(v * v for v in e_vals) / (2 * dc.P))
    prog.add_quad({(level, level): 0.5 * dc.P}, {t1: -1.0}, 0.0, f"sq_level[{tag}]")
    prog.add_quad({(e, e): 1.0 / (2 * dc.P)}, {t2: -1.0}, 0.0, f"sq_dual[{tag}]")
    # primal value <= dual value
    prog.add_constraint({t1: 1.0, level: dc.U_const, W: dc.U_delta, t2: 1.0, lam1: dc.B, lam2: 1.0},
                        "<=", 0.0, f"sd_value[{tag}]")
    added.update(lam3=lam3, W=W, e=e, sq_level=t1, sq_dual=t2)
    return added


def response_breakpoints(inst: MarketInstance, side: str, idx: int) -> tuple[float, ...]:
    """Gap values where an accepted quadratic follower's best response changes regime."""
    eff = inst.effect
    bid = _bid(inst, side, idx)
    if not eff.is_quadratic:
        return ()
    ub = _level_upper(bid, side)
    if side == TRAVELER:
        if not (bid.waiting_cost_rate > 0 and eff.a2T > 0):
            return ()
        s = traveler_stationary_gap(bid, eff)
        return (s - bid.quantity * ub, s)
    if not (bid.idle_cost_rate > 0 and eff.a2P > 0):
        return ()
    t = provider_stationary_gap(bid, eff)
    return (t, t + bid.capacity * ub)


def augment_response_pin(prog: MixedProgram, layout: Layout, inst: MarketInstance, idx: int,
                         side: str, fixed: FixedSets) -> bool:
    """Pin an accepted quadratic follower to its affine best response when the gap box
    holds no breakpoint. Valid for every bilevel-feasible point of the subtree."""
    bps = response_breakpoints(inst, side, idx)
    if not bps:
        return False
    dlo, dhi = fixed.gap_box(inst)
    if any(dlo < b < dhi for b in bps):
        return False
    bid = _bid(inst, side, idx)
    ub = _level_upper(bid, side)
    mid = 0.5 * (dlo + dhi)
    level = int(layout.x[idx] if side == TRAVELER else layout.y[idx])
    lo_bp, hi_bp = bps
    tag = _tname(idx) if side == TRAVELER else _pname(bid)
    if side == TRAVELER:
        # x = ub below lo_bp, 0 above hi_bp, (s* - gap)/Q between
        if mid <= lo_bp:
            prog.add_constraint({level: 1.0}, "=", ub, f"pin[{tag}]")
        elif mid >= hi_bp:
            prog.add_constraint({level: 1.0}, "=", 0.0, f"pin[{tag}]")
        else:
            prog.add_constraint({level: bid.quantity, layout.delta: 1.0}, "=", hi_bp, f"pin[{tag}]")
    else:
        # y = 0 below lo_bp, ub above hi_bp, (gap - t*)/C between
        if mid <= lo_bp:
            prog.add_constraint({level: 1.0}, "=", 0.0, f"pin[{tag}]")
        elif mid >= hi_bp:
            prog.add_constraint({level: 1.0}, "=", ub, f"pin[{tag}]")
        else:
            prog.add_constraint({level: bid.capacity, layout.delta: -1.0}, "=", -lo_bp, f"pin[{tag}]")
    return True


def build_subproblem(inst: MarketInstance, fixed: FixedSets, lambda_max: float | None = None):
    """HPR with SD rows for every follower fixed to accept, plus response pins where the
    gap box decides the follower's regime."""
    prog, layout = build_hpr(inst, fixed)
    pinned = []
    for side, group in ((TRAVELER, fixed.trav_fixed1), (PROVIDER, fixed.prov_fixed1)):
        for idx in sorted(group):
            layout.extra[(side, idx)] = augment_sd(prog, layout, inst, idx, side, fixed, lambda_max)
            if augment_response_pin(prog, layout, inst, idx, side, fixed):
                pinned.append((side, idx))
    layout.extra["pinned"] = pinned
    return prog, layout


# -- KKT system ---------------------------------------------------------------
@dataclass(frozen=True)
class ComplementarityPair:
    """Two nonnegative variables whose product must vanish."""

    a: int
    b: int
    side: str
    follower: int
    family: str


@dataclass
class FollowerKKT:
    side: str
    idx: int
    level: int
    budget_slack: int
    upper_slack: int
    lam1: int
    lam2: int
    lam3: int
    stat_slack: int


def build_mpec(inst: MarketInstance, model: EffectKind | str | None = None,
               lambda_max: float | None = None):
    """HPR plus follower KKT systems; complementarity returned as pairs, not enforced."""
    prog, layout = build_hpr(inst)
    dlo, dhi = inst.bounds.gap_lower, inst.bounds.gap_upper
    pairs: list[ComplementarityPair] = []
    kkts: list[FollowerKKT] = []
    entries = [(TRAVELER, i, int(layout.x[i]), int(layout.u[i])) for i in range(len(inst.travelers))]
    entries += [(PROVIDER, k, int(layout.y[k]), int(layout.w[k])) for k in range(len(inst.providers))]
    for side, idx, level, gate in entries:
        bid = _bid(inst, side, idx)
        tag = _tname(idx) if side == TRAVELER else _pname(bid)
        dc = dual_coefficients(bid, inst.effect)
        cap1, cap2, cap3 = multiplier_caps(dc, _level_upper(bid, side), dlo, dhi, lambda_max)
        g = gradient_range(dc, 1.0, dlo, dhi)
        s1 = prog.add_var(f"slack_budget[{tag}]", 0.0, max(dc.B, 0.0))
        s2 = prog.add_var(f"slack_upper[{tag}]", 0.0, 1.0)
        l1 = prog.add_var(f"mu1[{tag}]", 0.0, cap1)
        l2 = prog.add_var(f"mu2[{tag}]", 0.0, cap2)
        l3 = prog.add_var(f"mu3[{tag}]", 0.0, cap3)
        st = prog.add_var(f"stat[{tag}]", 0.0, g + dc.A * cap1 + cap2)
        prog.add_constraint({s1: 1.0, level: dc.A}, "=", dc.B, f"kkt_budget[{tag}]")
        prog.add_constraint({s2: 1.0, level: 1.0, gate: -1.0}, "=", 0.0, f"kkt_upper[{tag}]")
        # gradient + A mu1 + mu2 - mu3 = stat >= 0
        row = {level: dc.P, layout.delta: dc.U_delta, l1: dc.A, l2: 1.0, l3: -1.0, st: -1.0}
        prog.add_constraint(row, "=", -dc.U_const, f"kkt_stationarity[{tag}]")
        kkts.append(FollowerKKT(side, idx, level, s1, s2, l1, l2, l3, st))
        pairs += [ComplementarityPair(s1, l1, side, idx, "budget"),
                  ComplementarityPair(s2, l2, side, idx, "upper"),
                  ComplementarityPair(level, l3, side, idx, "lower"),
                  ComplementarityPair(st, level, side, idx, "stationarity")]
    layout.extra["kkt"] = kkts
    return prog, layout, pairs


def kkt_stationarity_residual(inst: MarketInstance, point, layout: Layout) -> np.ndarray:
    """Per follower |stationarity| + sum of |complementarity products| at an MPEC point."""
    pt = np.asarray(point, dtype=float)
    delta = pt[layout.delta]
    out = []
    for kk in layout.extra["kkt"]:
        dc = dual_coefficients(_bid(inst, kk.side, kk.idx), inst.effect)
        v = pt[kk.level]
        grad = dc.P * v + dc.U_const + dc.U_delta * delta
        stat = abs(grad + dc.A * pt[kk.lam1] + pt[kk.lam2] - pt[kk.lam3] - pt[kk.stat_slack])
        comp = (abs(pt[kk.budget_slack] * pt[kk.lam1]) + abs(pt[kk.upper_slack] * pt[kk.lam2])
                + abs(v * pt[kk.lam3]) + abs(pt[kk.stat_slack] * v))
        out.append(stat + comp)
    return np.array(out)


def follower_kkt_point(inst: MarketInstance, side: str, idx: int, level: float, gate: float,
                       delta: float) -> dict:
    """Multipliers of the one-dimensional KKT system at a given optimal level."""
    bid = _bid(inst, side, idx)
    dc = dual_coefficients(bid, inst.effect)
    grad = dc.P * level + dc.U_const + dc.U_delta * delta
    out = {"lam1": 0.0, "lam2": 0.0, "lam3": 0.0, "stat": 0.0,
           "budget_slack": dc.B - dc.A * level, "upper_slack": gate - level}
    tol = 1e-12
    if grad < 0:
        # pushed upward: the binding upper limit carries -grad
        if out["upper_slack"] <= tol:
            out["lam2"] = -grad
        elif dc.A > 0:
            out["lam1"] = -grad / dc.A
    elif grad > 0 and level <= tol:
        out["lam3"] = grad
    return out
