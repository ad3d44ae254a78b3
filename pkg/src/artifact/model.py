"""Domain types for the two-sided mobility market, validation and JSON I/O."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np


class EffectKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"


def mobility_quantity(distance: float, service_time: float) -> float:
    """Speed-weighted distance D^2/T (km^2/min)."""
    if not (distance > 0 and service_time > 0):
        raise ValueError(f"distance and service_time must be positive, got {distance}, {service_time}")
    return distance * distance / service_time


@dataclass(frozen=True)
class ModeSpec:
    mode_id: int
    speed: float
    sigma: float


@dataclass(frozen=True)
class TravelerBid:
    traveler_id: int
    distance: float
    service_time: float
    bid_price: float
    budget: float
    delay_budget: float
    inconvenience_tolerance: float
    reserve_price: float
    waiting_cost_rate: float

    @property
    def quantity(self) -> float:
        return mobility_quantity(self.distance, self.service_time)


@dataclass(frozen=True)
class ProviderBid:
    mode_id: int
    provider_id: int
    capacity: float
    sell_price: float
    budget: float
    operating_cost: float
    reserve_price: float
    idle_cost_rate: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.mode_id, self.provider_id)


@dataclass(frozen=True)
class NetworkEffect:
    """Waiting time a2T s^2 + a1T s + a0T in s = gap + Qx; idle time likewise in s = gap - Cy."""

    kind: EffectKind
    a2T: float
    a1T: float
    a0T: float
    a2P: float
    a1P: float
    a0P: float

    def waiting(self, s: float) -> float:
        return (self.a2T * s + self.a1T) * s + self.a0T

    def idle(self, s: float) -> float:
        return (self.a2P * s + self.a1P) * s + self.a0P

    @property
    def is_quadratic(self) -> bool:
        return self.kind == EffectKind.QUADRATIC


@dataclass(frozen=True)
class LeaderBounds:
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    gap_lower: float
    gap_upper: float


@dataclass(frozen=True)
class MarketInstance:
    modes: tuple
    travelers: tuple
    providers: tuple
    bounds: LeaderBounds
    effect: NetworkEffect
    name: str = ""

    @classmethod
    def build(cls, modes, travelers, providers, effect, *, p_range, q_range,
              gap_lower=0.0, gap_upper=None, name=""):
        """Construct with gap_upper defaulting to the capacity sum."""
        providers = tuple(sorted(providers, key=lambda pb: pb.key))
        if gap_upper is None:
            gap_upper = float(sum(pb.capacity for pb in providers))
        bounds = LeaderBounds(p_range[0], p_range[1], q_range[0], q_range[1], gap_lower, gap_upper)
        return cls(tuple(modes), tuple(travelers), providers, bounds, effect, name)

    @property
    def capacity_total(self) -> float:
        return float(sum(pb.capacity for pb in self.providers))

    def mode_index(self, mode_id: int) -> int:
        for k, md in enumerate(self.modes):
            if md.mode_id == mode_id:
                return k
        raise KeyError(mode_id)

    def with_effect(self, effect: NetworkEffect) -> "MarketInstance":
        return replace(self, effect=effect)

    def with_bounds(self, **changes) -> "MarketInstance":
        return replace(self, bounds=replace(self.bounds, **changes))

    # -- JSON --------------------------------------------------------------
    def to_dict(self) -> dict:
        e = self.effect
        return {
            "name": self.name,
            "modes": [{"id": md.mode_id, "speed": md.speed, "sigma": md.sigma} for md in self.modes],
            "travelers": [
                {"id": t.traveler_id, "D": t.distance, "T": t.service_time, "b": t.bid_price,
                 "B": t.budget, "R": t.delay_budget, "Gamma": t.inconvenience_tolerance,
                 "r": t.reserve_price, "alpha": t.waiting_cost_rate}
                for t in self.travelers],
            "providers": [
                {"m": pb.mode_id, "n": pb.provider_id, "C": pb.capacity, "beta": pb.sell_price,
                 "Bbar": pb.budget, "gamma": pb.operating_cost, "rho": pb.reserve_price,
                 "eta": pb.idle_cost_rate}
                for pb in self.providers],
            "bounds": {"p_min": self.bounds.p_min, "p_max": self.bounds.p_max,
                       "q_min": self.bounds.q_min, "q_max": self.bounds.q_max,
                       "C_lo": self.bounds.gap_lower, "C_hi": self.bounds.gap_upper},
            "effect": {"kind": e.kind.value, "a2T": e.a2T, "a1T": e.a1T, "a0T": e.a0T,
                       "a2P": e.a2P, "a1P": e.a1P, "a0P": e.a0P},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketInstance":
        modes = tuple(ModeSpec(int(x["id"]), float(x["speed"]), float(x["sigma"])) for x in d["modes"])
        travelers = tuple(
            TravelerBid(int(x["id"]), float(x["D"]), float(x["T"]), float(x["b"]), float(x["B"]),
                        float(x["R"]), float(x["Gamma"]), float(x["r"]), float(x["alpha"]))
            for x in d["travelers"])
        providers = tuple(
            ProviderBid(int(x["m"]), int(x["n"]), float(x["C"]), float(x["beta"]), float(x["Bbar"]),
                        float(x["gamma"]), float(x["rho"]), float(x["eta"]))
            for x in d["providers"])
        b = d["bounds"]
        bounds = LeaderBounds(float(b["p_min"]), float(b["p_max"]), float(b["q_min"]),
                              float(b["q_max"]), float(b["C_lo"]), float(b["C_hi"]))
        e = d["effect"]
        effect = NetworkEffect(EffectKind(e["kind"]), float(e["a2T"]), float(e["a1T"]), float(e["a0T"]),
                               float(e["a2P"]), float(e["a1P"]), float(e["a0P"]))
        return cls(modes, travelers, providers, bounds, effect, d.get("name", ""))

    def dumps(self) -> str:
        # repr-precision floats round-trip exactly
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "MarketInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LeaderDecision:
    p: float
    q: float
    u: np.ndarray
    w: np.ndarray
    l: np.ndarray  # service time per (traveler, mode), min
    delta: float
    x: np.ndarray
    y: np.ndarray

    def gap_residual(self, inst: MarketInstance) -> float:
        supply = sum(pb.capacity * yv for pb, yv in zip(inst.providers, self.y))
        demand = sum(t.quantity * xv for t, xv in zip(inst.travelers, self.x))
        return abs(self.delta - (supply - demand))

    def leader_profit(self, inst: MarketInstance) -> float:
        rev = sum(t.bid_price * t.quantity * xv for t, xv in zip(inst.travelers, self.x))
        pay = sum(pb.sell_price * pb.capacity * yv for pb, yv in zip(inst.providers, self.y))
        return float(rev - pay)

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "u": [float(v) for v in self.u],
                "w": [float(v) for v in self.w], "l": np.asarray(self.l).tolist(),
                "delta": self.delta, "x": [float(v) for v in self.x],
                "y": [float(v) for v in self.y]}


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    message: str


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, kind, subject, message):
        self.findings.append(Finding(kind, subject, message))

    def kinds(self) -> list[str]:
        return [f.kind for f in self.findings]


def validate_instance(inst: MarketInstance) -> ValidationReport:
    rep = ValidationReport()
    ids = [md.mode_id for md in inst.modes]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        rep.add("mode ids", "modes", f"mode ids {ids} not unique and contiguous from 1")
    for md in inst.modes:
        if not md.speed > 0:
            rep.add("speed > 0", f"mode {md.mode_id}", f"speed {md.speed}")
        if not md.sigma >= 0:
            rep.add("sigma >= 0", f"mode {md.mode_id}", f"sigma {md.sigma}")

    seen = set()
    for t in inst.travelers:
        who = f"traveler {t.traveler_id}"
        if t.traveler_id in seen:
            rep.add("traveler ids", who, "duplicate id")
        seen.add(t.traveler_id)
        for fname in ("distance", "service_time", "bid_price", "budget", "reserve_price",
                      "waiting_cost_rate"):
            if not getattr(t, fname) > 0:
                rep.add(f"{fname} > 0", who, f"{fname} = {getattr(t, fname)}")
        for fname in ("delay_budget", "inconvenience_tolerance"):
            if not getattr(t, fname) >= 0:
                rep.add(f"{fname} >= 0", who, f"{fname} = {getattr(t, fname)}")
        if t.bid_price < inst.bounds.p_min:
            rep.add("equivalence hypothesis", who,
                    f"bid price {t.bid_price} below p_min {inst.bounds.p_min}")

    seen = set()
    for pb in inst.providers:
        who = f"provider {pb.key}"
        if pb.key in seen:
            rep.add("provider ids", who, "duplicate (mode, provider) pair")
        seen.add(pb.key)
        if pb.mode_id not in ids:
            rep.add("provider mode", who, f"unknown mode {pb.mode_id}")
        if not pb.capacity > 0:
            rep.add("capacity > 0", who, f"capacity = {pb.capacity}")
        if not pb.sell_price > 0:
            rep.add("sell_price > 0", who, f"sell_price = {pb.sell_price}")
        for fname in ("budget", "operating_cost", "idle_cost_rate"):
            if not getattr(pb, fname) >= 0:
                rep.add(f"{fname} >= 0", who, f"{fname} = {getattr(pb, fname)}")
        if pb.sell_price > inst.bounds.q_max:
            rep.add("equivalence hypothesis", who,
                    f"sell price {pb.sell_price} above q_max {inst.bounds.q_max}")

    b = inst.bounds
    if b.p_min > b.p_max:
        rep.add("p_min <= p_max", "bounds", f"{b.p_min} > {b.p_max}")
    if b.q_min > b.q_max:
        rep.add("q_min <= q_max", "bounds", f"{b.q_min} > {b.q_max}")
    if b.gap_lower > b.gap_upper:
        rep.add("gap_lower <= gap_upper", "bounds", f"{b.gap_lower} > {b.gap_upper}")
    for v in (b.p_min, b.p_max, b.q_min, b.q_max, b.gap_lower, b.gap_upper):
        if not math.isfinite(v):
            rep.add("finite bounds", "bounds", f"non-finite bound {v}")
            break

    _check_effect(inst.effect, max(b.gap_upper, 0.0), rep)
    return rep


def _check_effect(e: NetworkEffect, c_hi: float, rep: ValidationReport):
    if e.kind == EffectKind.LINEAR:
        if e.a2T != 0 or e.a2P != 0:
            rep.add("linear effect", "effect", "linear effect with nonzero quadratic coefficient")
        if e.a1T > 0:
            rep.add("linear effect", "effect", f"a1T = {e.a1T} > 0")
        if e.a1P < 0:
            rep.add("linear effect", "effect", f"a1P = {e.a1P} < 0")
    else:
        if not e.a2T > 0:
            rep.add("quadratic effect", "effect", f"a2T = {e.a2T} not positive")
        if not e.a2P > 0:
            rep.add("quadratic effect", "effect", f"a2P = {e.a2P} not positive")
    # nonnegativity over [0, C_hi] at endpoints and vertex
    for label, fn, a2, a1 in (("waiting", e.waiting, e.a2T, e.a1T), ("idle", e.idle, e.a2P, e.a1P)):
        pts = [0.0, c_hi]
        if a2 > 0:
            vert = -a1 / (2 * a2)
            if 0.0 < vert < c_hi:
                pts.append(vert)
        if min(fn(s) for s in pts) < -1e-12:
            rep.add("effect nonnegative", "effect", f"{label} time negative on [0, {c_hi}]")
