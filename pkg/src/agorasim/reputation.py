"""Trust scores with stake- and age-weighted sybil resistance.

Raw scores move asymmetrically: trust accrues slowly on passes and
collapses fast on failures or violations. Effective reputation discounts
the raw score by stake share and account age, so fresh identities and
split-stake swarms gate at zero no matter how many clones exist.

No manipulation-proofness is claimed. The known gaming vector of farming
reputation through low-class self-dealing is left to the transaction
cycle detector; see the sentinel module.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Literal

from .ledger import AgentState, EntryKind
from .market import Account, ContractState, round_half_up

if TYPE_CHECKING:
    from .market import Market

ReputationEvent = Literal["pass", "fail", "violation"]


@dataclass(frozen=True)
class ReputationPolicy:
    s0: float = 0.5               # starting score for newly registered agents
    alpha_plus: float = 0.05      # slow trust accrual
    alpha_minus: float = 0.5      # fast trust collapse
    stake_ref: int = 200          # micro-credits for full stake weight
    age_ref: int = 32             # ticks for full age weight
    gates: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.75)
    observable: bool = True       # whether consumers can see scores

    def __post_init__(self) -> None:
        if not (0 < self.alpha_plus <= 1 and 0 < self.alpha_minus <= 1):
            raise ValueError("update rates must lie in (0, 1]")


@dataclass(frozen=True)
class ReputationRecord:
    agent_id: bytes
    score: float
    registered_tick: int
    violation_count: int = 0


def new_record(agent_id: bytes, tick: int, policy: ReputationPolicy) -> ReputationRecord:
    return ReputationRecord(agent_id=agent_id, score=policy.s0, registered_tick=tick)


def update(record: ReputationRecord, event: ReputationEvent, policy: ReputationPolicy) -> ReputationRecord:
    if event == "pass":
        score = record.score + policy.alpha_plus * (1.0 - record.score)
        violations = record.violation_count
    elif event == "fail":
        score = record.score * (1.0 - policy.alpha_minus)
        violations = record.violation_count
    elif event == "violation":
        score = record.score * (1.0 - policy.alpha_minus)
        violations = record.violation_count + 1
    else:
        raise ValueError(f"unknown reputation event {event!r}")
    score = min(1.0, max(0.0, score))
    return replace(record, score=score, violation_count=violations)


def effective_reputation(
    record: ReputationRecord,
    account: Account,
    tick: int,
    policy: ReputationPolicy,
) -> float:
    """Raw score discounted by stake share and account age."""
    stake_weight = min(1.0, (account.balance + account.staked) / policy.stake_ref)
    age_weight = min(1.0, (tick - record.registered_tick) / policy.age_ref)
    return record.score * stake_weight * age_weight


def _seq_ranges(seqs: list[int]) -> list[list[int]]:
    """Compress a sorted seq list to inclusive [start, end] ranges."""
    ranges: list[list[int]] = []
    for s in seqs:
        if ranges and s == ranges[-1][1] + 1:
            ranges[-1][1] = s
        else:
            ranges.append([s, s])
    return ranges


def breach_response(market: "Market", agent_id: bytes, evidence_seq: int, tick: int,
                    forfeit_split: float = 0.5) -> dict:
    """Revoke identity, freeze funds, forfeit stake, flag history.

    Idempotent: a second call on an already-revoked agent logs a no-op
    flag and changes nothing. Pending contracts the agent posted are
    cancelled with escrow returned; contracts it was working are
    forfeited against its bond. Frozen funds stay on the account, so
    conservation is untouched.
    """
    record = market.registry.get(agent_id)
    if record.state is AgentState.REVOKED:
        market.chain.append(
            EntryKind.FLAG, agent_id,
            {"breach": True, "already_revoked": True, "evidence": evidence_seq}, tick,
        )
        return {"already_revoked": True}

    market.registry.set_state(agent_id, AgentState.REVOKED)
    account = market.account(agent_id)
    account.frozen = True

    cancelled, forfeited = [], []
    for contract in list(market.contracts.values()):
        if contract.state is ContractState.POSTED and contract.poster == agent_id:
            market.cancel(contract, tick, reason="poster-revoked")
            cancelled.append(contract.contract_id)
        elif contract.worker == agent_id and contract.state in (
            ContractState.ACCEPTED, ContractState.DELIVERED,
            ContractState.JUDGED_PASS, ContractState.JUDGED_FAIL,
        ):
            # Force the bond forfeit path regardless of judged state.
            market.account(contract.poster).balance += contract.escrow
            account.staked -= contract.bond
            share = round_half_up(contract.bond * forfeit_split)
            market.pools.insurance += share
            market.account(contract.poster).balance += contract.bond - share
            contract.state = ContractState.FORFEITED
            market.chain.append(
                EntryKind.FORFEIT, agent_id,
                {"contract": contract.contract_id, "breach": True,
                 "to_insurance": share, "to_poster": contract.bond - share,
                 "escrow_returned": contract.escrow},
                tick,
            )
            forfeited.append(contract.contract_id)

    # Residual stake (outside any live contract) forfeits to the pool.
    if account.staked > 0:
        residual = account.staked
        account.staked = 0
        market.pools.insurance += residual
    else:
        residual = 0

    seqs = sorted(e.seq for e in market.chain if e.actor == agent_id)
    flag = market.chain.append(
        EntryKind.FLAG, agent_id,
        {"breach": True, "evidence": evidence_seq, "history_ranges": _seq_ranges(seqs),
         "history_count": len(seqs), "stake_forfeited": residual},
        tick,
    )
    return {
        "already_revoked": False,
        "cancelled": cancelled,
        "forfeited": forfeited,
        "flag_seq": flag.seq,
        "history_count": len(seqs),
    }
