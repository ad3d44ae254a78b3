"""Closed-form follower best responses and the follower-optimality audit.

Travelers minimise cost over x in [0, ub]; providers maximise profit over
y in [0, ub]. Both objectives are one-dimensional and either linear or convex
(concave for providers) in the participation level, so the optimum is an
endpoint or the clamped stationary point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LeaderDecision, MarketInstance, NetworkEffect, ProviderBid, TravelerBid

ZERO_SLOPE = 1e-12


@dataclass(frozen=True)
class FollowerResponse:
    level: float
    objective: float
    optimal_set: tuple[float, float]


def traveler_cost(bid: TravelerBid, x: float, delta: float, effect: NetworkEffect) -> float:
    Q = bid.quantity
    return (bid.bid_price * Q * x + bid.reserve_price * Q * (1.0 - x)
            + bid.waiting_cost_rate * effect.waiting(delta + Q * x))


def provider_profit(bid: ProviderBid, y: float, delta: float, effect: NetworkEffect) -> float:
    C = bid.capacity
    g = bid.operating_cost
    return ((bid.sell_price - g) * C * y + (bid.reserve_price - g) * C * (1.0 - y)
            - bid.idle_cost_rate * effect.idle(delta - C * y))


def traveler_upper(bid: TravelerBid, u: float) -> float:
    return min(u, bid.budget / (bid.bid_price * bid.quantity), 1.0)


def provider_upper(bid: ProviderBid, w: float) -> float:
    cap = bid.budget / (bid.capacity * bid.operating_cost) if bid.operating_cost > 0 else 1.0
    return min(w, cap, 1.0)


def traveler_slope(bid: TravelerBid, effect: NetworkEffect) -> float:
    """d cost / dx for the linear effect."""
    Q = bid.quantity
    return (bid.bid_price - bid.reserve_price) * Q + bid.waiting_cost_rate * effect.a1T * Q


def provider_slope(bid: ProviderBid, effect: NetworkEffect) -> float:
    """d profit / dy for the linear effect."""
    C = bid.capacity
    return (bid.sell_price - bid.reserve_price) * C + bid.idle_cost_rate * effect.a1P * C


def traveler_stationary_gap(bid: TravelerBid, effect: NetworkEffect) -> float:
    """Value of s = gap + Qx where the quadratic cost is stationary."""
    return ((bid.reserve_price - bid.bid_price - bid.waiting_cost_rate * effect.a1T)
            / (2.0 * bid.waiting_cost_rate * effect.a2T))


def provider_stationary_gap(bid: ProviderBid, effect: NetworkEffect) -> float:
    """Value of s = gap - Cy where the quadratic profit is stationary."""
    return (-((bid.sell_price - bid.reserve_price) + bid.idle_cost_rate * effect.a1P)
            / (2.0 * bid.idle_cost_rate * effect.a2P))


def _curved(rate: float, a2: float) -> bool:
    return rate > 0 and a2 > 0


def best_response_traveler(bid: TravelerBid, u: float, delta: float,
                           effect: NetworkEffect) -> FollowerResponse:
    ub = max(0.0, traveler_upper(bid, u))
    if ub == 0.0:
        return FollowerResponse(0.0, traveler_cost(bid, 0.0, delta, effect), (0.0, 0.0))
    if effect.is_quadratic and _curved(bid.waiting_cost_rate, effect.a2T):
        s_star = traveler_stationary_gap(bid, effect)
        x = min(max((s_star - delta) / bid.quantity, 0.0), ub)
        return FollowerResponse(x, traveler_cost(bid, x, delta, effect), (x, x))
    # without curvature the cost is linear in x
    c = traveler_slope(bid, effect)
    scale = max(1.0, abs(bid.bid_price - bid.reserve_price) * bid.quantity)
    if c < -ZERO_SLOPE * scale:
        x, opt = ub, (ub, ub)
    elif c > ZERO_SLOPE * scale:
        x, opt = 0.0, (0.0, 0.0)
    else:
        x, opt = ub, (0.0, ub)
    return FollowerResponse(x, traveler_cost(bid, x, delta, effect), opt)


def best_response_provider(bid: ProviderBid, w: float, delta: float,
                           effect: NetworkEffect) -> FollowerResponse:
    ub = max(0.0, provider_upper(bid, w))
    if ub == 0.0:
        return FollowerResponse(0.0, provider_profit(bid, 0.0, delta, effect), (0.0, 0.0))
    if effect.is_quadratic and _curved(bid.idle_cost_rate, effect.a2P):
        t_star = provider_stationary_gap(bid, effect)
        y = min(max((delta - t_star) / bid.capacity, 0.0), ub)
        return FollowerResponse(y, provider_profit(bid, y, delta, effect), (y, y))
    d = provider_slope(bid, effect)
    scale = max(1.0, abs(bid.sell_price - bid.reserve_price) * bid.capacity)
    if d > ZERO_SLOPE * scale:
        y, opt = ub, (ub, ub)
    elif d < -ZERO_SLOPE * scale:
        y, opt = 0.0, (0.0, 0.0)
    else:
        y, opt = 0.0, (0.0, ub)
    return FollowerResponse(y, provider_profit(bid, y, delta, effect), opt)


@dataclass
class AuditResult:
    suboptimal_travelers: set = field(default_factory=set)
    suboptimal_providers: set = field(default_factory=set)
    traveler_gaps: np.ndarray | None = None
    provider_gaps: np.ndarray | None = None

    @property
    def all_optimal(self) -> bool:
        return not self.suboptimal_travelers and not self.suboptimal_providers


def audit_followers(inst: MarketInstance, sol: LeaderDecision, eps: float = 1e-4) -> AuditResult:
    """Compare each follower's value at the leader's point with its best response."""
    eff = inst.effect
    delta = float(sol.delta)
    tg = np.zeros(len(inst.travelers))
    pg = np.zeros(len(inst.providers))
    for i, bid in enumerate(inst.travelers):
        u = float(round(sol.u[i]))
        best = best_response_traveler(bid, u, delta, eff).objective
        tg[i] = abs(best - traveler_cost(bid, float(sol.x[i]), delta, eff))
    for k, bid in enumerate(inst.providers):
        w = float(round(sol.w[k]))
        best = best_response_provider(bid, w, delta, eff).objective
        pg[k] = abs(best - provider_profit(bid, float(sol.y[k]), delta, eff))
    return AuditResult({i for i in range(len(tg)) if tg[i] > eps},
                       {k for k in range(len(pg)) if pg[k] > eps}, tg, pg)
