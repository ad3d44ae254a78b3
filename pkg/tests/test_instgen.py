import numpy as np
import pytest
from scipy.stats import kstest

from artifact.instgen import (DEFAULT_RANGES, MODE_PROVIDER_RANGES, MODE_SPEEDS, GroupSpec,
                              example1, generate, preset_overrides)
from artifact.model import EffectKind, validate_instance


def test_one_provider_per_mode():
    inst = generate(GroupSpec(10, [1, 1, 1, 1, 1], seed=3))
    assert len(inst.travelers) == 10 and len(inst.providers) == 5
    assert sorted(pb.mode_id for pb in inst.providers) == [1, 2, 3, 4, 5]
    assert GroupSpec(10, [1, 1, 1, 1, 1]).name == "MaaS-10-5"


def test_group_names_deal_cheapest_mode_first():
    assert GroupSpec.from_name("MaaS-4-2").providers_per_mode == [0, 0, 0, 1, 1]
    assert GroupSpec.from_name("MaaS-4-7").providers_per_mode == [1, 1, 1, 2, 2]
    assert GroupSpec.from_name("MaaS-4-7").name == "MaaS-4-7"
    with pytest.raises(ValueError):
        GroupSpec.from_name("maas-4")


def test_same_seed_same_instance():
    spec = GroupSpec.from_name("MaaS-8-5", seed=42)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(GroupSpec.from_name("MaaS-8-5", seed=43))


def test_streams_are_per_entity():
    small = generate(GroupSpec(3, [1, 1, 1, 1, 1], seed=9))
    big = generate(GroupSpec(12, [1, 1, 1, 1, 1], seed=9))
    assert small.providers == big.providers
    assert small.travelers == big.travelers[:3]


def test_field_ranges_and_validity():
    for seed in range(20):
        inst = generate(GroupSpec.from_name("MaaS-10-5", seed=seed))
        assert validate_instance(inst).ok
        for t in inst.travelers:
            assert 1 <= t.distance <= 18
            assert t.bid_price >= inst.bounds.p_min
        for pb in inst.providers:
            assert pb.sell_price <= inst.bounds.q_max
            if pb.mode_id == 1:
                assert 8 <= pb.sell_price <= 12


def _uniform_ks(values, lo, hi):
    values = np.asarray(values)
    assert values.min() >= lo and values.max() <= hi
    return kstest((values - lo) / (hi - lo), "uniform").statistic


def test_traveler_draws_uniform_on_stated_ranges():
    inst = generate(GroupSpec(10_000, [1, 1, 1, 1, 1], seed=2024))
    tr = inst.travelers
    D = np.array([t.distance for t in tr])
    b = np.array([t.bid_price for t in tr])
    rg = DEFAULT_RANGES
    stats = {
        "distance": _uniform_ks(D, *rg["distance"]),
        "service_time": _uniform_ks([(t.service_time - t.distance / MODE_SPEEDS[0])
                                     / (t.distance / MODE_SPEEDS[4] - t.distance / MODE_SPEEDS[0])
                                     for t in tr], 0, 1),
        "bid_price": _uniform_ks(b, *rg["bid_price"]),
        "reserve_markup": _uniform_ks([t.reserve_price - t.bid_price for t in tr], *rg["reserve_markup"]),
        "waiting_cost_rate": _uniform_ks([t.waiting_cost_rate for t in tr], *rg["waiting_cost_rate"]),
        "delay_budget": _uniform_ks([t.delay_budget * t.bid_price for t in tr], *rg["delay_budget_scale"]),
        "inconvenience": _uniform_ks([t.inconvenience_tolerance * t.bid_price / t.distance for t in tr],
                                     *rg["inconvenience_scale"]),
    }
    offsets = np.array([t.budget - t.bid_price * t.quantity for t in tr])
    assert offsets.min() >= rg["budget_offset"][0] and offsets.max() <= rg["budget_offset"][1]
    for name, ks in stats.items():
        assert ks < 0.05, (name, ks)


def test_provider_draws_on_stated_ranges():
    inst = generate(GroupSpec(1, [400] * 5, seed=7))
    for m in range(1, 6):
        pbs = [pb for pb in inst.providers if pb.mode_id == m]
        b_lo, b_hi, c_lo, c_hi = MODE_PROVIDER_RANGES[m - 1]
        assert _uniform_ks([pb.sell_price for pb in pbs], b_lo, b_hi) < 0.1
        assert _uniform_ks([pb.capacity for pb in pbs], c_lo, c_hi) < 0.1
        assert _uniform_ks([pb.sell_price - pb.reserve_price for pb in pbs],
                           *DEFAULT_RANGES["reserve_discount"]) < 0.1
        assert _uniform_ks([pb.idle_cost_rate for pb in pbs], *DEFAULT_RANGES["idle_cost_rate"]) < 0.1
        for pb in pbs:
            assert 0 <= pb.operating_cost <= max(0.1, pb.reserve_price - 0.1)


def test_ratio_overrides_stretch_price_ranges():
    inst = generate(GroupSpec.from_name("MaaS-50-5", seed=1, bmax_ratio=6.0, betamax_ratio=1.1))
    assert max(t.bid_price for t in inst.travelers) <= 6.0
    assert max(t.bid_price for t in inst.travelers) > 4.0
    for pb in inst.providers:
        lo = MODE_PROVIDER_RANGES[pb.mode_id - 1][0]
        assert lo <= pb.sell_price <= 1.1 * lo


def test_effect_stays_nonnegative_on_gap_range():
    for kind in EffectKind:
        for seed in range(5):
            inst = generate(GroupSpec.from_name("MaaS-5-5", seed=seed, kind=kind))
            grid = np.linspace(0, inst.bounds.gap_upper, 101)
            assert all(inst.effect.waiting(s) >= 0 for s in grid)
            assert all(inst.effect.idle(s) >= 0 for s in grid)


def test_presets():
    assert preset_overrides("default") == {}
    assert "effect" in preset_overrides("dense", "quadratic")
    assert "effect" not in preset_overrides("dense", "linear")
    with pytest.raises(ValueError):
        preset_overrides("sparse")


def test_example1_fields():
    inst = example1()
    assert inst.travelers[0].quantity == pytest.approx(10.0)
    assert inst.travelers[1].quantity == pytest.approx(12.0)
    assert inst.capacity_total == 55.0 and inst.bounds.gap_upper == 55.0
    assert inst.effect.a1T == -0.025 and inst.effect.a0T == 10.0
    q = example1("quadratic").effect
    assert (q.a2T, q.a1T, q.a2P, q.a1P) == (0.025, -0.2, 0.2, 0.0)
