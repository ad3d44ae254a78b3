"""Random market instances and the two-traveler golden instance.

Each traveler and provider draws from its own PCG64 stream derived from
``SeedSequence(seed, spawn_key=...)`` with spawn keys ``(0, i)`` for traveler
``i`` and ``(1, m, n)`` for provider ``(m, n)``; growing one side never
perturbs the other.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .model import (EffectKind, MarketInstance, ModeSpec, NetworkEffect, ProviderBid,
                    TravelerBid, validate_instance)

MODE_SPEEDS = (0.5, 0.27, 0.24, 0.21, 0.18)
MODE_SIGMAS = (0.0, 0.1, 0.2, 0.5, 1.5)
# per-mode (sell price low, high, capacity low, high)
MODE_PROVIDER_RANGES = (
    (8.0, 12.0, 50.0, 100.0),
    (7.0, 8.0, 50.0, 100.0),
    (5.0, 7.0, 30.0, 100.0),
    (3.0, 5.0, 30.0, 100.0),
    (1.0, 2.0, 10.0, 50.0),
)

DEFAULT_RANGES = {
    "distance": (1.0, 18.0),
    "bid_price": (1.0, 4.0),
    "reserve_markup": (1.5, 4.0),       # r - b
    "budget_offset": (-0.5, 1.5),       # B - bQ
    "waiting_cost_rate": (0.02, 0.05),
    "delay_budget_scale": (0.0, 100.0),  # R in [0, scale/b]
    "inconvenience_scale": (0.0, 100.0),  # Gamma in [0, scale*D/b]
    "provider_budget_offset": (-0.75, 2.75),  # Bbar - beta*C
    "idle_cost_rate": (1.0, 2.0),
    "reserve_discount": (0.5, 1.0),     # beta - rho
}

DEFAULT_EFFECT = {
    "waiting_base": 10.0,      # a0 of waiting time
    "waiting_slope": 0.025,    # |a1| of waiting time, capped so waiting stays >= 0
    "idle_base": 1.0,          # a0 of idle time
    "idle_slope": 0.2,         # a1 of idle time (linear)
    "idle_curvature": 0.2,     # a2 * gap_upper of idle time (quadratic)
    "waiting_vertex": 1.0,     # waiting-time minimum at this fraction of gap_upper (quadratic)
}

# Under the default ranges few bundles fit both a traveler's time window and bid,
# so small markets rarely trade. This preset uses cheaper, smaller providers and
# looser traveler budgets, which keeps most small instances profitable.
PRESETS = {
    "default": {},
    "dense": {
        "mode_ranges": ((2.5, 3.5, 4.0, 16.0), (2.0, 3.0, 4.0, 16.0), (1.5, 2.5, 4.0, 16.0),
                        (1.2, 2.0, 4.0, 16.0), (1.0, 1.5, 2.0, 8.0)),
        "delay_budget_scale": (20.0, 200.0),
        "inconvenience_scale": (20.0, 200.0),
    },
}
# quadratic markets in the dense preset use a steeper idle curve so responses are interior
DENSE_QUADRATIC_EFFECT = {"idle_curvature": 5.0}


def preset_overrides(name: str, kind: EffectKind | str = EffectKind.LINEAR) -> dict:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    out = dict(PRESETS[name])
    if name == "dense" and EffectKind(kind) == EffectKind.QUADRATIC:
        out["effect"] = dict(DENSE_QUADRATIC_EFFECT)
    return out


@dataclass
class GroupSpec:
    n_travelers: int
    providers_per_mode: list
    seed: int = 0
    kind: EffectKind = EffectKind.LINEAR
    overrides: dict = field(default_factory=dict)
    bmax_ratio: float | None = None
    betamax_ratio: float | None = None
    gap_lower: float = 0.0
    gap_upper: float | None = None
    capacity_scale: float = 1.0

    @property
    def name(self) -> str:
        return f"MaaS-{self.n_travelers}-{sum(self.providers_per_mode)}"

    @classmethod
    def from_name(cls, name: str, seed: int = 0, **kw) -> "GroupSpec":
        """'MaaS-N-K': K providers dealt round-robin from the cheapest mode upward."""
        mt = re.fullmatch(r"MaaS-(\d+)-(\d+)", name)
        if not mt:
            raise ValueError(f"group name {name!r} is not of the form MaaS-N-K")
        n, k = int(mt.group(1)), int(mt.group(2))
        per_mode = [0] * 5
        for t in range(k):
            per_mode[4 - t % 5] += 1
        return cls(n, per_mode, seed, **kw)


def _stream(seed: int, key: tuple) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _ranges(spec: GroupSpec) -> dict:
    rng = dict(DEFAULT_RANGES)
    rng.update({k: v for k, v in spec.overrides.items() if k in DEFAULT_RANGES})
    if spec.bmax_ratio is not None:
        lo = rng["bid_price"][0]
        rng["bid_price"] = (lo, lo * spec.bmax_ratio)
    return rng


def _provider_ranges(spec: GroupSpec, m: int):
    b_lo, b_hi, c_lo, c_hi = spec.overrides.get("mode_ranges", MODE_PROVIDER_RANGES)[m - 1]
    if spec.betamax_ratio is not None:
        b_hi = b_lo * spec.betamax_ratio
    return b_lo, b_hi, c_lo * spec.capacity_scale, c_hi * spec.capacity_scale


def _draw_traveler(i: int, spec: GroupSpec, rg: dict) -> TravelerBid:
    g = _stream(spec.seed, (0, i))
    D = g.uniform(*rg["distance"])
    T = g.uniform(D / MODE_SPEEDS[0], D / MODE_SPEEDS[4])
    b = g.uniform(*rg["bid_price"])
    r = b + g.uniform(*rg["reserve_markup"])
    Q = D * D / T
    B = b * Q + g.uniform(*rg["budget_offset"])
    while B <= 0:
        B = b * Q + g.uniform(*rg["budget_offset"])
    alpha = g.uniform(*rg["waiting_cost_rate"])
    lo, hi = rg["delay_budget_scale"]
    R = g.uniform(lo / b, hi / b)
    lo, hi = rg["inconvenience_scale"]
    Gamma = g.uniform(lo * D / b, hi * D / b)
    return TravelerBid(i + 1, D, T, b, B, R, Gamma, r, alpha)


def _draw_provider(m: int, n: int, spec: GroupSpec, rg: dict) -> ProviderBid:
    g = _stream(spec.seed, (1, m, n))
    b_lo, b_hi, c_lo, c_hi = _provider_ranges(spec, m)
    beta = g.uniform(b_lo, b_hi)
    C = g.uniform(c_lo, c_hi)
    Bbar = beta * C + g.uniform(*rg["provider_budget_offset"])
    eta = g.uniform(*rg["idle_cost_rate"])
    rho = beta - g.uniform(*rg["reserve_discount"])
    gamma = g.uniform(0.0, max(0.1, rho - 0.1))
    return ProviderBid(m, n, C, beta, max(Bbar, 0.0), gamma, rho, eta)


def default_effect(kind: EffectKind, gap_upper: float, params: dict | None = None) -> NetworkEffect:
    """Waiting falls and idling rises with the gap; both stay nonnegative on [0, gap_upper].

    The linear waiting slope is capped at waiting_base / gap_upper. The quadratic
    waiting time has its minimum at waiting_vertex * gap_upper, where it equals
    waiting_base - slope * vertex / 2 >= waiting_base / 2.
    """
    p = dict(DEFAULT_EFFECT)
    p.update(params or {})
    top = max(gap_upper, 1e-9)
    slope = min(p["waiting_slope"], p["waiting_base"] / top)
    if kind == EffectKind.LINEAR:
        return NetworkEffect(kind, 0.0, -slope, p["waiting_base"], 0.0, p["idle_slope"], p["idle_base"])
    vertex = p["waiting_vertex"] * top
    return NetworkEffect(kind, slope / (2 * vertex), -slope, p["waiting_base"],
                         p["idle_curvature"] / top, 0.0, p["idle_base"])


def generate(spec: GroupSpec) -> MarketInstance:
    rg = _ranges(spec)
    travelers = [_draw_traveler(i, spec, rg) for i in range(spec.n_travelers)]
    providers = [_draw_provider(m, n, spec, rg)
                 for m in range(1, 6) for n in range(1, spec.providers_per_mode[m - 1] + 1)]
    modes = [ModeSpec(m + 1, MODE_SPEEDS[m], MODE_SIGMAS[m]) for m in range(5)]
    cap = float(sum(pb.capacity for pb in providers))
    gap_upper = cap if spec.gap_upper is None else spec.gap_upper
    p_max = max((t.bid_price for t in travelers), default=1.0) + 0.5
    q_max = max((pb.sell_price for pb in providers), default=1.0) + 0.2
    effect = default_effect(spec.kind, max(gap_upper, 0.0), spec.overrides.get("effect"))
    inst = MarketInstance.build(modes, travelers, providers, effect, p_range=(1.0, p_max),
                                q_range=(1.0, q_max), gap_lower=spec.gap_lower,
                                gap_upper=gap_upper, name=f"{spec.name}#{spec.seed}")
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError(f"generated instance failed validation: {rep.findings}")
    return inst


# The golden instance leaves mode speeds and inconvenience rates unstated; these
# values put its high-point relaxation at 20.44.
EXAMPLE1_MODES = (ModeSpec(1, 0.43, 0.5), ModeSpec(2, 0.15, 1.5))


def example1(kind: EffectKind | str = EffectKind.LINEAR) -> MarketInstance:
    kind = EffectKind(kind)
    travelers = (
        TravelerBid(1, 40.0, 160.0, 2.0, 20.0, 50.0, 200.0, 2.5, 2.0),
        TravelerBid(2, 60.0, 300.0, 4.0, 40.0, 30.0, 300.0, 4.5, 2.2),
    )
    providers = (
        ProviderBid(1, 1, 25.0, 1.5, 3.0, 0.1, 0.5, 0.15),
        ProviderBid(2, 1, 30.0, 2.0, 5.5, 0.0, 1.0, 0.1),
    )
    if kind == EffectKind.LINEAR:
        effect = NetworkEffect(kind, 0.0, -0.025, 10.0, 0.0, 0.2, 1.0)
    else:
        effect = NetworkEffect(kind, 0.025, -0.2, 10.0, 0.2, 0.0, 1.0)
    return MarketInstance.build(EXAMPLE1_MODES, travelers, providers, effect,
                                p_range=(1.0, 4.5), q_range=(1.0, 2.2), gap_lower=0.0,
                                gap_upper=55.0, name=f"example1-{kind.value}")
