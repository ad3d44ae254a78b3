"""Bilevel branch-and-bound on follower accept/reject decisions, the complementarity
branching benchmark, and an enumeration oracle.

All three report the leader's best audited profit as LB. Node selection is
best-bound-first with ties on the lowest node id, so every run is reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .follower import (audit_followers, best_response_provider, best_response_traveler,
                       provider_stationary_gap, provider_upper, traveler_stationary_gap,
                       traveler_upper)
from .model import LeaderDecision, MarketInstance
from .reform import (PROVIDER, TRAVELER, FixedSets, build_mpec, build_subproblem,
                     default_lambda_max, kkt_stationarity_residual, response_breakpoints)
from .subsolver import SolverOptions, Status, solve

log = logging.getLogger(__name__)

TRACE = 5
OPEN, FATHOMED, INTEGRAL = "open", "fathomed", "integral"
COMPLEMENTARITY_TOL = 1e-6
MIN_GAP_WIDTH = 1e-7


class Rule(str, Enum):
    BP = "bp"
    DIFFOB = "diffob"
    WI = "wi"


@dataclass
class BnbConfig:
    rule: Rule = Rule.BP
    theta: float = 0.5
    eps_follower: float = 1e-4
    gap_tol: float = 1e-6
    time_limit_s: float = 10800.0
    lambda_max: float | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.rule = Rule(self.rule)
        if not (self.eps_follower > 0 and self.gap_tol > 0 and self.time_limit_s > 0):
            raise ValueError("tolerances and time limit must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta {self.theta} outside [0, 1]")


@dataclass
class SearchNode:
    node_id: int
    parent: int | None
    fixed: FixedSets
    bound: float
    branch: str | None = None
    status: str = OPEN
    relaxed_solution: LeaderDecision | None = None


@dataclass
class SolveReport:
    method: str
    rule: str | None
    incumbent: LeaderDecision | None
    LB: float | None
    UB: float
    gap: float
    k: int
    wall_time: float
    trace: list = field(default_factory=list)
    time_limit_hit: bool = False
    gap_absolute: bool = False

    @property
    def lb_value(self) -> float:
        return -math.inf if self.LB is None else self.LB

    def to_dict(self) -> dict:
        return {"method": self.method, "rule": self.rule, "LB": self.LB, "UB": self.UB,
                "gap": self.gap, "gap_absolute": self.gap_absolute, "k": self.k,
                "wall_time": self.wall_time, "time_limit_hit": self.time_limit_hit,
                "incumbent": None if self.incumbent is None else self.incumbent.to_dict()}


def report_gap(lb: float | None, ub: float) -> tuple[float, bool]:
    """Relative gap (UB-LB)/LB; 100% without incumbent; absolute UB-LB when LB is 0."""
    if lb is None:
        return 1.0, False
    if lb > 0:
        return max(0.0, (ub - lb) / lb), False
    return max(0.0, ub - lb), True


def _close_enough(lb: float | None, ub: float, tol: float) -> bool:
    if lb is None:
        return False
    return ub - lb <= tol * max(1.0, abs(lb))


# -- branching rule -----------------------------------------------------------
def _minmax(vals):
    lo, hi = min(vals), max(vals)
    if hi - lo <= 0:
        return [0.0] * len(vals)
    return [(v - lo) / (hi - lo) for v in vals]


def select_branch(sub_travelers, sub_providers, fixed: FixedSets, traveler_gaps,
                  provider_gaps, inst: MarketInstance, cfg: BnbConfig):
    """(side, index) of the follower to branch on; providers go first."""
    provs = sorted(k for k in sub_providers if not fixed.decided(PROVIDER, k))
    travs = sorted(i for i in sub_travelers if not fixed.decided(TRAVELER, i))
    if provs:
        side, cand = PROVIDER, provs
        # a lower sell price is preferred
        pref = [-inst.providers[k].sell_price for k in cand]
        gaps = [provider_gaps[k] for k in cand]
    elif travs:
        side, cand = TRAVELER, travs
        pref = [inst.travelers[i].bid_price for i in cand]
        gaps = [traveler_gaps[i] for i in cand]
    else:
        raise ValueError("no suboptimal undecided follower to branch on")
    if cfg.rule == Rule.BP:
        score = pref
    elif cfg.rule == Rule.DIFFOB:
        score = gaps
    else:
        ng, npf = _minmax(gaps), _minmax(pref)
        score = [cfg.theta * a + (1 - cfg.theta) * b for a, b in zip(ng, npf)]
    best = max(score)
    pick = next(c for c, s in zip(cand, score) if s == best)
    return side, pick


# -- SD branch-and-bound ------------------------------------------------------
def solve_sdbb(inst: MarketInstance, cfg: BnbConfig | None = None) -> SolveReport:
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    lam = cfg.lambda_max if cfg.lambda_max is not None else default_lambda_max(inst)
    ids = itertools.count()
    root = SearchNode(next(ids), None, FixedSets(), math.inf)
    heap = [(-root.bound, root.node_id, root)]
    LB, incumbent, k = None, None, 0
    trace = []
    hit = False
    while heap:
        if time.perf_counter() - t0 > cfg.time_limit_s:
            hit = True
            break
        ub_open = -heap[0][0]
        if _close_enough(LB, max(ub_open, LB if LB is not None else -math.inf), cfg.gap_tol):
            break
        _, _, node = heapq.heappop(heap)
        rec = {"id": node.node_id, "parent": node.parent, "branch": node.branch,
               "bound": node.bound, "fixed": node.fixed.describe()}
        if LB is not None and node.bound <= LB + cfg.gap_tol * max(1.0, abs(LB)):
            node.status = FATHOMED
            trace.append({**rec, "status": "pruned"})
            continue
        prog, layout = build_subproblem(inst, node.fixed, lam)
        out = solve(prog, cfg.solver)
        k += 1
        if out.status == Status.INFEASIBLE:
            node.status = FATHOMED
            trace.append({**rec, "status": "infeasible"})
            log.log(TRACE, "node %d infeasible", node.node_id)
            continue
        if out.status != Status.OPTIMAL:
            node.status = FATHOMED
            trace.append({**rec, "status": "solver_failure", "solver_status": out.status.value})
            log.warning("node %d: subproblem returned %s; fathomed", node.node_id, out.status.value)
            continue
        value = min(out.objective, node.bound)
        dec = layout.decision(out.point)
        node.relaxed_solution = dec
        if LB is not None and value <= LB + cfg.gap_tol * max(1.0, abs(LB)):
            node.status = FATHOMED
            trace.append({**rec, "value": value, "status": "fathomed"})
            continue
        audit = audit_followers(inst, dec, cfg.eps_follower)
        rec.update(value=value, suboptimal_travelers=sorted(audit.suboptimal_travelers),
                   suboptimal_providers=sorted(audit.suboptimal_providers))
        if audit.all_optimal:
            node.status = INTEGRAL
            profit = dec.leader_profit(inst)
            if LB is None or profit > LB:
                LB, incumbent = profit, dec
                log.info("node %d: incumbent %.6g", node.node_id, profit)
            trace.append({**rec, "status": "integral"})
            continue
        node.status = FATHOMED
        children = _branch(node, audit, dec, inst, cfg)
        if children is None:
            trace.append({**rec, "status": "unresolved"})
            log.warning("node %d: suboptimal followers already fixed and gap box exhausted",
                        node.node_id)
            continue
        label, fixes = children
        rec["children"] = []
        for tag, fx in fixes:
            child = SearchNode(next(ids), node.node_id, fx, value, f"{label}={tag}")
            rec["children"].append(child.node_id)
            heapq.heappush(heap, (-child.bound, child.node_id, child))
        trace.append({**rec, "status": "branched", "branch_on": label})
    open_bounds = [-b for b, _, _ in heap]
    ub = max(open_bounds + ([LB] if LB is not None else []), default=LB if LB is not None else 0.0)
    if LB is not None and not hit:
        ub = max(LB, max(open_bounds, default=LB))
    gap, absolute = report_gap(LB, ub)
    return SolveReport("sdbb", cfg.rule.value, incumbent, LB, ub, gap, k,
                       time.perf_counter() - t0, trace, hit, absolute)


def _branch(node: SearchNode, audit, dec: LeaderDecision, inst, cfg):
    try:
        side, idx = select_branch(audit.suboptimal_travelers, audit.suboptimal_providers,
                                  node.fixed, audit.traveler_gaps, audit.provider_gaps, inst, cfg)
    except ValueError:
        return _split_gap(node, audit, dec, inst)
    label = f"u[{idx + 1}]" if side == TRAVELER else \
        f"w[{inst.providers[idx].mode_id}{inst.providers[idx].provider_id}]"
    return label, [("0", node.fixed.fix(side, idx, 0)), ("1", node.fixed.fix(side, idx, 1))]


def _split_gap(node: SearchNode, audit, dec: LeaderDecision, inst):
    """Split the gap box when every suboptimal follower is already decided.

    Splits at the response breakpoint nearest the relaxed gap, so each side of
    the split fixes that follower's regime and its response can be pinned.
    Falls back to bisection at the relaxed gap if no breakpoint lies inside.
    """
    lo, hi = node.fixed.gap_box(inst)
    if hi - lo <= MIN_GAP_WIDTH:
        return None
    cands = []
    for side, group in ((PROVIDER, audit.suboptimal_providers), (TRAVELER, audit.suboptimal_travelers)):
        for idx in sorted(group):
            cands += [b for b in response_breakpoints(inst, side, idx) if lo < b < hi]
    if cands:
        cut = min(cands, key=lambda b: (abs(b - dec.delta), b))
    else:
        # keep both halves nonempty by at least a tenth of the box
        margin = 0.1 * (hi - lo)
        cut = min(max(dec.delta, lo + margin), hi - margin)
    return "delta", [(f"[{lo:.6g},{cut:.6g}]", node.fixed.narrow(lo, cut)),
                     (f"[{cut:.6g},{hi:.6g}]", node.fixed.narrow(cut, hi))]


# -- complementarity branching benchmark ---------------------------------------
def solve_bardmoore(inst: MarketInstance, cfg: BnbConfig | None = None) -> SolveReport:
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    lam = cfg.lambda_max if cfg.lambda_max is not None else default_lambda_max(inst)
    base, layout, pairs = build_mpec(inst, lambda_max=lam)
    ids = itertools.count()
    root = (math.inf, next(ids), None, {}, None)
    heap = [(-root[0], root[1], root)]
    LB, incumbent, k = None, None, 0
    trace = []
    hit = False
    while heap:
        if time.perf_counter() - t0 > cfg.time_limit_s:
            hit = True
            break
        if _close_enough(LB, max(-heap[0][0], LB if LB is not None else -math.inf), cfg.gap_tol):
            break
        _, _, (bound, nid, parent, zeroed, label) = heapq.heappop(heap)
        rec = {"id": nid, "parent": parent, "branch": label, "bound": bound}
        if LB is not None and bound <= LB + cfg.gap_tol * max(1.0, abs(LB)):
            trace.append({**rec, "status": "pruned"})
            continue
        prog = base.copy()
        for var in zeroed:
            prog.set_bounds(var, 0.0, 0.0)
        out = solve(prog, cfg.solver)
        k += 1
        if out.status == Status.INFEASIBLE:
            trace.append({**rec, "status": "infeasible"})
            continue
        if out.status != Status.OPTIMAL:
            trace.append({**rec, "status": "solver_failure", "solver_status": out.status.value})
            log.warning("node %d: relaxation returned %s; fathomed", nid, out.status.value)
            continue
        value = min(out.objective, bound)
        if LB is not None and value <= LB + cfg.gap_tol * max(1.0, abs(LB)):
            trace.append({**rec, "value": value, "status": "fathomed"})
            continue
        pt = out.point
        products = [abs(pt[pr.a] * pt[pr.b]) for pr in pairs]
        open_pairs = [j for j, pr in enumerate(pairs) if pr.a not in zeroed and pr.b not in zeroed]
        worst = max(products) if products else 0.0
        rec["value"] = value
        if worst <= COMPLEMENTARITY_TOL:
            dec = layout.decision(pt)
            audit = audit_followers(inst, dec, cfg.eps_follower)
            resid = kkt_stationarity_residual(inst, pt, layout)
            if audit.all_optimal:
                profit = dec.leader_profit(inst)
                if LB is None or profit > LB:
                    LB, incumbent = profit, dec
                trace.append({**rec, "status": "integral",
                              "kkt_residual": float(resid.max(initial=0.0))})
                continue
            # complementarity holds but the audit disagrees: keep splitting pairs
            candidates = [j for j in open_pairs if products[j] > 0.0] or open_pairs
        else:
            candidates = [j for j in open_pairs if products[j] > COMPLEMENTARITY_TOL]
        if not candidates:
            trace.append({**rec, "status": "unresolved"})
            log.warning("node %d: no complementarity pair left to branch on", nid)
            continue
        j = max(candidates, key=lambda t: (products[t], -t))
        pr = pairs[j]
        kids = []
        for tag, var in (("a", pr.a), ("b", pr.b)):
            cid = next(ids)
            kids.append(cid)
            z = dict(zeroed)
            z[var] = True
            heapq.heappush(heap, (-value, cid, (value, cid, nid, z, f"pair{j}.{tag}=0")))
        trace.append({**rec, "status": "branched", "branch_on": f"pair{j}", "children": kids})
    open_bounds = [-b for b, _, _ in heap]
    ub = max(open_bounds + ([LB] if LB is not None else []), default=0.0)
    gap, absolute = report_gap(LB, ub)
    return SolveReport("bardmoore", None, incumbent, LB, ub, gap, k,
                       time.perf_counter() - t0, trace, hit, absolute)


# -- enumeration oracle ----------------------------------------------------------
def _affine_response(inst, u, w, delta_lo, delta_hi):
    """Per-follower (intercept, slope) of the best response in the gap on [delta_lo, delta_hi],
    or (lo, hi) interval bounds for linear followers."""
    eff = inst.effect
    mid = 0.5 * (delta_lo + delta_hi)
    xs, ys = [], []
    for t, ui in zip(inst.travelers, u):
        if not eff.is_quadratic or not (t.waiting_cost_rate > 0 and eff.a2T > 0) or not ui:
            lo, hi = best_response_traveler(t, float(ui), mid, eff).optimal_set
            xs.append(("box", lo, hi))
            continue
        ub = traveler_upper(t, 1.0)
        raw = (traveler_stationary_gap(t, eff) - mid) / t.quantity
        if raw <= 0:
            xs.append(("box", 0.0, 0.0))
        elif raw >= ub:
            xs.append(("box", ub, ub))
        else:
            xs.append(("affine", traveler_stationary_gap(t, eff) / t.quantity, -1.0 / t.quantity))
    for pb, wi in zip(inst.providers, w):
        if not eff.is_quadratic or not (pb.idle_cost_rate > 0 and eff.a2P > 0) or not wi:
            lo, hi = best_response_provider(pb, float(wi), mid, eff).optimal_set
            ys.append(("box", lo, hi))
            continue
        ub = provider_upper(pb, 1.0)
        raw = (mid - provider_stationary_gap(pb, eff)) / pb.capacity
        if raw <= 0:
            ys.append(("box", 0.0, 0.0))
        elif raw >= ub:
            ys.append(("box", ub, ub))
        else:
            ys.append(("affine", -provider_stationary_gap(pb, eff) / pb.capacity, 1.0 / pb.capacity))
    return xs, ys


def _breakpoints(inst, u, w):
    pts = []
    for i, ui in enumerate(u):
        if ui:
            pts += response_breakpoints(inst, TRAVELER, i)
    for k, wi in enumerate(w):
        if wi:
            pts += response_breakpoints(inst, PROVIDER, k)
    return pts


def _segment_lp(inst, xs, ys, dlo, dhi):
    """max leader profit over (delta, x, y, l) with responses pinned; None if infeasible."""
    trav, prov, modes = inst.travelers, inst.providers, inst.modes
    nI, nP, nM = len(trav), len(prov), len(modes)
    nv = 1 + nI + nP + nI * nM
    ix = lambda i: 1 + i
    iy = lambda k: 1 + nI + k
    il = lambda i, m: 1 + nI + nP + i * nM + m
    c = np.zeros(nv)
    for i, t in enumerate(trav):
        c[ix(i)] = -t.bid_price * t.quantity
    for k, pb in enumerate(prov):
        c[iy(k)] = pb.sell_price * pb.capacity
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    bounds = [(dlo, dhi)]

    def pin(spec, col):
        if spec[0] == "box":
            bounds.append((spec[1], spec[2]))
        else:
            bounds.append((None, None))
            row = np.zeros(nv)
            row[col] = 1.0
            row[0] = -spec[2]
            A_eq.append(row)
            b_eq.append(spec[1])

    for i in range(nI):
        pin(xs[i], ix(i))
    for k in range(nP):
        pin(ys[k], iy(k))
    for i, t in enumerate(trav):
        for m in range(nM):
            bounds.append((0.0, t.service_time + t.delay_budget))
        row = np.zeros(nv)
        for m, md in enumerate(modes):
            row[il(i, m)] = md.speed
        row[ix(i)] = -t.distance
        A_eq.append(row)
        b_eq.append(0.0)
        row = np.zeros(nv)
        for m in range(nM):
            row[il(i, m)] = 1.0
        row[ix(i)] = -t.service_time
        A_ub.append(-row)
        b_ub.append(0.0)
        A_ub.append(row)
        b_ub.append(t.delay_budget)
        row = np.zeros(nv)
        for m, md in enumerate(modes):
            row[il(i, m)] = md.sigma
        A_ub.append(row)
        b_ub.append(t.inconvenience_tolerance)
    for m, md in enumerate(modes):
        row = np.zeros(nv)
        for i in range(nI):
            row[il(i, m)] = md.speed ** 2
        for k, pb in enumerate(prov):
            if pb.mode_id == md.mode_id:
                row[iy(k)] -= pb.capacity
        A_ub.append(row)
        b_ub.append(0.0)
    row = np.zeros(nv)
    row[0] = 1.0
    for k, pb in enumerate(prov):
        row[iy(k)] = -pb.capacity
    for i, t in enumerate(trav):
        row[ix(i)] = t.quantity
    A_eq.append(row)
    b_eq.append(0.0)
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub if b_ub else None,
                  A_eq=np.array(A_eq), b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    z = res.x
    return -res.fun, z[0], z[1:1 + nI], z[1 + nI:1 + nI + nP], \
        z[1 + nI + nP:].reshape(nI, nM) if nI * nM else np.zeros((nI, nM))


def price_interval(values_accept, values_reject, lo, hi, accept_below: bool):
    """Feasible threshold interval: accept iff value >= p (travelers) or value <= q (providers)."""
    if accept_below:
        # travelers: accepted need p <= b, rejected need p >= b
        a = max([lo] + list(values_reject))
        b = min([hi] + list(values_accept))
    else:
        a = max([lo] + list(values_accept))
        b = min([hi] + list(values_reject))
    return a, b


def brute_force_oracle(inst: MarketInstance, cfg: BnbConfig | None = None) -> SolveReport:
    """Enumerate accept/reject profiles; each is completed by an exact LP (HiGHS)."""
    nI, nP = len(inst.travelers), len(inst.providers)
    if nI + nP > 16:
        raise ValueError("oracle enumerates at most 16 followers")
    t0 = time.perf_counter()
    bd = inst.bounds
    best, best_dec, evaluated = None, None, 0
    for bits in itertools.product((0, 1), repeat=nI + nP):
        u, w = bits[:nI], bits[nI:]
        plo, phi = price_interval([t.bid_price for t, a in zip(inst.travelers, u) if a],
                                  [t.bid_price for t, a in zip(inst.travelers, u) if not a],
                                  bd.p_min, bd.p_max, True)
        qlo, qhi = price_interval([pb.sell_price for pb, a in zip(inst.providers, w) if a],
                                  [pb.sell_price for pb, a in zip(inst.providers, w) if not a],
                                  bd.q_min, bd.q_max, False)
        if plo > phi or qlo > qhi:
            continue
        evaluated += 1
        cuts = sorted({v for v in _breakpoints(inst, u, w) if bd.gap_lower < v < bd.gap_upper})
        edges = [bd.gap_lower] + cuts + [bd.gap_upper]
        for dlo, dhi in zip(edges[:-1], edges[1:]):
            xs, ys = _affine_response(inst, u, w, dlo, dhi)
            res = _segment_lp(inst, xs, ys, dlo, dhi)
            if res is None:
                continue
            val, delta, x, y, l = res
            if best is None or val > best + 1e-12:
                best = val
                best_dec = LeaderDecision(plo, qhi, np.array(u, float), np.array(w, float), l,
                                          float(delta), np.asarray(x), np.asarray(y))
    gap, absolute = report_gap(best, best if best is not None else 0.0)
    return SolveReport("oracle", None, best_dec, best, best if best is not None else 0.0, gap,
                       evaluated, time.perf_counter() - t0, [], False, absolute)
