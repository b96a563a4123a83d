"""Fee formulas against hand-computed anchors and brute-force grids."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agorasim.economics import (
    DimensionMismatchError,
    EconPolicy,
    EconomicsError,
    InfoStore,
    MessageMeter,
    SurgeState,
    ingestion_fee,
    message_tax,
    premium,
)
from agorasim.market import round_half_up

DEFAULTS = EconPolicy()


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestRedundancy:
    def test_empty_store_is_zero(self):
        store = InfoStore(dimension=4)
        assert store.redundancy(unit([1, 0, 0, 0])) == 0.0

    def test_identical_vector_is_one(self):
        store = InfoStore(dimension=4)
        v = unit([1, 2, 3, 4])
        store.add(b"\x01" * 32, v, tick=0)
        assert store.redundancy(v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero_clamped(self):
        store = InfoStore(dimension=4)
        store.add(b"\x01" * 32, unit([1, 0, 0, 0]), tick=0)
        assert store.redundancy(unit([0, 1, 0, 0])) == 0.0
        # Opposed vectors clamp at zero too.
        assert store.redundancy(unit([-1, 0, 0, 0])) == 0.0

    def test_dimension_mismatch(self):
        store = InfoStore(dimension=4)
        with pytest.raises(DimensionMismatchError):
            store.redundancy(unit([1, 0, 0]))

    def test_unverified_entries_do_not_count(self):
        store = InfoStore(dimension=2, verify_lag=5)
        v = unit([1, 0])
        store.add(b"\x01" * 32, v, tick=0)
        assert store.redundancy(v) == 0.0
        store.advance_verification(tick=5)
        assert store.redundancy(v) == pytest.approx(1.0)

    @given(st.lists(st.floats(min_value=-1, max_value=1), min_size=3, max_size=3)
           .filter(lambda v: np.linalg.norm(v) > 1e-6))
    @settings(max_examples=50, deadline=None)
    def test_self_membership_gives_one(self, vec):
        store = InfoStore(dimension=3)
        v = unit(vec)
        store.add(b"\x02" * 32, v, tick=0)
        assert store.redundancy(v) == pytest.approx(1.0, abs=1e-9)


class TestIngestionFee:
    def test_anchor_95_percent_redundant(self):
        # Hand derivation with defaults F_min=1, F_max=100, r0=0.5:
        # 1 + 99 * (0.45/0.5) = 90.1 -> 90.
        assert ingestion_fee(0.95, DEFAULTS) == 90

    def test_low_redundancy_pays_floor(self):
        for r in (0.0, 0.25, 0.5):
            assert ingestion_fee(r, DEFAULTS) == 1

    def test_full_redundancy_pays_cap(self):
        assert ingestion_fee(1.0, DEFAULTS) == 100

    def test_grid_matches_brute_force_and_monotone(self):
        def brute(r):
            scaled = (r - 0.5) / 0.5
            scaled = min(1.0, max(0.0, scaled))
            return round_half_up(1 + (100 - 1) * scaled)

        prev = -1
        for i in range(101):
            r = i / 100
            fee = ingestion_fee(r, DEFAULTS)
            assert fee == brute(r)
            assert fee >= prev
            prev = fee

    def test_out_of_range_rejected(self):
        with pytest.raises(EconomicsError):
            ingestion_fee(1.01, DEFAULTS)


class TestMessageTax:
    def test_zero_window_count(self):
        assert message_tax(0, DEFAULTS) == 1

    def test_boundary_at_free_allowance(self):
        assert message_tax(10, DEFAULTS) == 1

    def test_escalation_anchor(self):
        # 1 * (1 + 0.1 * (110 - 10)) = 11, independently: 1 * 11 = 11.
        assert message_tax(110, DEFAULTS) == 11

    def test_beta_zero_is_constant(self):
        policy = EconPolicy(beta=0.0)
        assert {message_tax(m, policy) for m in (0, 10, 100, 10_000)} == {1}

    @given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=60, deadline=None)
    def test_non_decreasing(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert message_tax(lo, DEFAULTS) <= message_tax(hi, DEFAULTS)


class TestPremium:
    def test_class0_full_reputation(self):
        assert premium(0, 1.0, DEFAULTS) == DEFAULTS.premium_base

    def test_zero_reputation_doubles(self):
        assert premium(0, 0.0, DEFAULTS) == 2 * DEFAULTS.premium_base

    def test_class3_new_agent_anchor(self):
        # With defaults base=10 slope=0.5 and a fresh agent's effective
        # reputation of 0: 10 * (1 + 1.5) * 2 = 50.
        assert premium(3, 0.0, DEFAULTS) == 50


class TestSurge:
    def test_factor_one_is_identity(self):
        surge = SurgeState()
        surge.activate(1, duration=10, tick=0)
        assert surge.effective_factor(5) == 1
        assert message_tax(0, DEFAULTS, surge.effective_factor(5)) == message_tax(0, DEFAULTS)

    def test_expiry_restores_exactly(self):
        surge = SurgeState()
        surge.activate(1000, duration=5, tick=10)
        assert surge.effective_factor(14) == 1000
        assert surge.effective_factor(15) == 1
        assert message_tax(0, DEFAULTS, surge.effective_factor(20)) == 1

    def test_surge_scales_tax(self):
        surge = SurgeState()
        surge.activate(1000, duration=5, tick=0)
        assert message_tax(0, DEFAULTS, surge.effective_factor(1)) == 1000

    def test_factor_below_one_rejected(self):
        with pytest.raises(EconomicsError):
            SurgeState().activate(0, duration=5, tick=0)


class TestMessageMeter:
    def test_window_counting(self):
        meter = MessageMeter(window=4)
        a = b"\x0a" * 32
        for t in range(6):
            meter.record(a, t)
            meter.record(a, t)
        assert meter.window_count(a, 5) == 8  # ticks 2..5, two each
        meter.prune(5)
        assert meter.window_count(a, 5) == 8


def test_policy_validation():
    with pytest.raises(EconomicsError):
        EconPolicy(f_min=10, f_max=5)
    with pytest.raises(EconomicsError):
        EconPolicy(r0=1.0)
