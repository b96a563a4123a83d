"""Score dynamics, sybil discounting, and the breach response path."""

import pytest
from hypothesis import given, settings, strategies as st

from agorasim import codec
from agorasim.ledger import AgentState, EntryKind, IdentityRegistry, LedgerChain
from agorasim.market import (
    Account,
    ContractState,
    Market,
    Pools,
    Role,
    SubMarket,
    TaskChecklist,
)
from agorasim.reputation import (
    ReputationPolicy,
    ReputationRecord,
    breach_response,
    effective_reputation,
    new_record,
    update,
)

POLICY = ReputationPolicy()
AGENT = b"\x07" * 32


def rec(score, tick=0, violations=0):
    return ReputationRecord(AGENT, score, registered_tick=tick, violation_count=violations)


class TestUpdate:
    def test_pass_at_ceiling_is_fixed_point(self):
        assert update(rec(1.0), "pass", POLICY).score == 1.0

    def test_fail_halves_at_default_rate(self):
        # 0.8 * (1 - 0.5) = 0.4, computed independently.
        assert update(rec(0.8), "fail", POLICY).score == pytest.approx(0.4)

    def test_fail_at_floor_stays_zero(self):
        assert update(rec(0.0), "fail", POLICY).score == 0.0

    def test_violation_decrements_score_and_counts(self):
        out = update(rec(0.6), "violation", POLICY)
        assert out.score == pytest.approx(0.3)
        assert out.violation_count == 1

    def test_pass_moves_toward_one_slowly(self):
        out = update(rec(0.5), "pass", POLICY)
        assert out.score == pytest.approx(0.5 + 0.05 * 0.5)

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.lists(st.sampled_from(["pass", "fail", "violation"]), max_size=20))
    @settings(max_examples=100, deadline=None)
    def test_score_stays_in_unit_interval(self, s0, events):
        r = rec(s0)
        for e in events:
            r = update(r, e, POLICY)
            assert 0.0 <= r.score <= 1.0

    @given(st.floats(min_value=1e-6, max_value=1.0))
    @settings(max_examples=50, deadline=None)
    def test_violation_strictly_decreases_positive_score(self, s0):
        r = rec(s0)
        assert update(r, "violation", POLICY).score < r.score

    def test_k_violations_bound_after_passes(self):
        # Passes first, then k violations: score <= (1 - alpha_minus)^k.
        r = rec(POLICY.s0)
        for _ in range(30):
            r = update(r, "pass", POLICY)
        for k in range(1, 6):
            r = update(r, "violation", POLICY)
            assert r.score <= (1 - POLICY.alpha_minus) ** k + 1e-12


class TestEffectiveReputation:
    def test_mature_fully_staked_equals_raw(self):
        account = Account(AGENT, balance=POLICY.stake_ref, staked=0)
        r = rec(0.7, tick=0)
        assert effective_reputation(r, account, tick=POLICY.age_ref, policy=POLICY) == pytest.approx(0.7)

    def test_brand_new_agent_is_zero(self):
        account = Account(AGENT, balance=10_000)
        r = rec(0.9, tick=100)
        assert effective_reputation(r, account, tick=100, policy=POLICY) == 0.0

    def test_never_exceeds_raw_score(self):
        for balance in (0, 50, 200, 10_000):
            for age in (0, 1, 16, 32, 1000):
                account = Account(AGENT, balance=balance)
                r = rec(0.8, tick=0)
                assert effective_reputation(r, account, tick=age, policy=POLICY) <= 0.8 + 1e-12

    def test_sybil_swarm_effective_zero(self):
        # One stake split across 20 clones at age 0: every clone gates at 0;
        # at full age each clone's weight is capped by its stake share.
        stake_total = POLICY.stake_ref
        clones = 20
        per_clone = stake_total // clones
        for i in range(clones):
            account = Account(bytes([i]) * 32, balance=per_clone)
            r = ReputationRecord(account.agent_id, POLICY.s0, registered_tick=0)
            assert effective_reputation(r, account, tick=0, policy=POLICY) == 0.0
            aged = effective_reputation(r, account, tick=POLICY.age_ref, policy=POLICY)
            assert aged <= POLICY.s0 * (stake_total / clones) / POLICY.stake_ref + 1e-12

    def test_sybil_budget_total_capacity_non_increasing(self):
        # For every gate in the table, the stake a swarm can bring to tasks
        # behind that gate never grows by splitting identities: per-clone
        # effective reputation <= s * min(1, S/(n*stake_ref)), so once
        # dilution drops a clone below the gate its stake stops counting.
        stake_total = 400
        for gate in POLICY.gates:
            capacities = []
            for n in (1, 2, 4, 8, 16):
                per = stake_total // n
                account = Account(AGENT, balance=per)
                r = rec(POLICY.s0, tick=0)
                each = effective_reputation(r, account, tick=POLICY.age_ref, policy=POLICY)
                assert each <= POLICY.s0 * min(1.0, stake_total / (n * POLICY.stake_ref)) + 1e-12
                capacities.append(n * per if each >= gate else 0)
            for a, b in zip(capacities, capacities[1:]):
                assert b <= a


GENESIS = codec.digest("sha256", b"breach-tests")
ROLES = [Role("trader", frozenset({"transfer", "post-task", "accept-task"}), frozenset({"m"}))]


def build_market():
    chain = LedgerChain(GENESIS)
    registry = IdentityRegistry(chain, {"trader"})
    registry.register_owner("acme")
    market = Market(chain, registry, Pools(), roles=ROLES, sub_markets=[SubMarket("main")])
    ids = {}
    for name in ("rogue", "counterparty", "poster"):
        rec_ = registry.register_agent(name.encode(), "acme", {"trader"}, set(), "main", tick=0)
        market.open_account(rec_.agent_id, 1000)
        ids[name] = rec_.agent_id
    return market, ids


class TestBreachResponse:
    def test_revokes_freezes_and_flags(self):
        market, ids = build_market()
        issuance = market.total_issuance()
        result = breach_response(market, ids["rogue"], evidence_seq=0, tick=5)
        assert market.registry.get(ids["rogue"]).state is AgentState.REVOKED
        assert market.account(ids["rogue"]).frozen
        assert market.total_issuance() == issuance
        flag = market.chain.entry(result["flag_seq"])
        assert flag.kind is EntryKind.FLAG

    def test_flagged_history_covers_all_agent_entries(self):
        market, ids = build_market()
        for t in range(1, 6):
            market.transfer(ids["rogue"], ids["counterparty"], 10, tick=t)
        expected = sum(1 for e in market.chain if e.actor == ids["rogue"])
        result = breach_response(market, ids["rogue"], evidence_seq=1, tick=9)
        assert result["history_count"] == expected
        flag = market.chain.entry(result["flag_seq"]).fields()
        covered = sum(hi - lo + 1 for lo, hi in flag["history_ranges"])
        assert covered == expected

    def test_pending_posted_contracts_cancelled_with_escrow_back(self):
        market, ids = build_market()
        c = market.post_task(ids["rogue"], 0, 300, TaskChecklist(), tick=1)
        breach_response(market, ids["rogue"], evidence_seq=0, tick=2)
        assert c.state is ContractState.CANCELLED
        assert market.account(ids["rogue"]).balance == 1000
        assert market.account(ids["rogue"]).frozen

    def test_worked_contract_forfeits_bond(self):
        market, ids = build_market()
        issuance = market.total_issuance()
        c = market.post_task(ids["poster"], 1, 100, TaskChecklist(), tick=1)
        market.accept_task(c, ids["rogue"], effective_reputation=1.0, tick=1)
        breach_response(market, ids["rogue"], evidence_seq=0, tick=2)
        assert c.state is ContractState.FORFEITED
        assert market.pools.insurance == 25
        assert market.account(ids["poster"]).balance == 1000 + 25
        assert market.total_issuance() == issuance

    def test_idempotent_on_revoked(self):
        market, ids = build_market()
        breach_response(market, ids["rogue"], evidence_seq=0, tick=2)
        out = breach_response(market, ids["rogue"], evidence_seq=0, tick=3)
        assert out["already_revoked"]

    def test_revoked_actions_denied_afterwards(self):
        market, ids = build_market()
        breach_response(market, ids["rogue"], evidence_seq=0, tick=2)
        with pytest.raises(Exception):
            market.transfer(ids["rogue"], ids["counterparty"], 1, tick=3)
        decision = market.check_access(ids["rogue"], "transfer", "m", "main")
        assert not decision.allowed and decision.reason == "state"
