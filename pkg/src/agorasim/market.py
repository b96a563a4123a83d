"""Accounts, escrowed task contracts, role-based access, and sub-markets.

Money is integer micro-credits throughout. The conservation identity
(sum of balances + stakes + locked escrow + insurance pool + treasury ==
initial issuance) is maintained by construction: every operation moves
credits between those buckets and never mints or burns.

Contracts walk a fixed state machine:
    posted -> accepted -> delivered -> judged_pass -> settled
                                    -> judged_fail -> forfeited
    posted -> cancelled
Escrow locks at post; the worker bond locks at accept; both release only
at settle/forfeit/cancel. The judge is a pluggable deterministic oracle
over the contract checklist; failure is a verdict, not an error.

Access control is positive-grant only: an action is allowed iff some role
of the agent grants the action class, some role grants the data scope,
the target sub-market is the agent's own or a gateway rule admits the
crossing, the agent is active, and the sub-market is not paused.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

from .ledger import (
    SYSTEM_ACTOR,
    AgentRecord,
    AgentState,
    EntryKind,
    IdentityRegistry,
    LedgerChain,
)


class MarketError(Exception):
    pass


class InsufficientFundsError(MarketError):
    pass


class FrozenAccountError(MarketError):
    pass


class ContractStateError(MarketError):
    pass


class GateError(MarketError):
    """Acceptance gate failure; `gate` names which check failed."""

    def __init__(self, gate: str, detail: str = "") -> None:
        super().__init__(f"gate failure: {gate}" + (f" ({detail})" if detail else ""))
        self.gate = gate


@dataclass
class Account:
    agent_id: bytes
    balance: int = 0
    staked: int = 0
    frozen: bool = False

    def _check(self) -> None:
        assert self.balance >= 0 and self.staked >= 0


@dataclass
class Pools:
    """System-held buckets: fee sink and the forfeiture/insurance pool."""

    treasury: int = 0
    insurance: int = 0


class ContractState(Enum):
    POSTED = "posted"
    ACCEPTED = "accepted"
    DELIVERED = "delivered"
    JUDGED_PASS = "judged_pass"
    JUDGED_FAIL = "judged_fail"
    SETTLED = "settled"
    FORFEITED = "forfeited"
    CANCELLED = "cancelled"


_TRANSITIONS = {
    ContractState.POSTED: {ContractState.ACCEPTED, ContractState.CANCELLED},
    ContractState.ACCEPTED: {ContractState.DELIVERED},
    ContractState.DELIVERED: {ContractState.JUDGED_PASS, ContractState.JUDGED_FAIL},
    ContractState.JUDGED_PASS: {ContractState.SETTLED},
    ContractState.JUDGED_FAIL: {ContractState.FORFEITED},
    ContractState.SETTLED: set(),
    ContractState.FORFEITED: set(),
    ContractState.CANCELLED: set(),
}


@dataclass(frozen=True)
class TaskChecklist:
    """Machine-checkable constraints a delivery is judged against."""

    required_fields: tuple[str, ...] = ()
    compute_cap: int = 1_000_000
    prohibited_scopes: frozenset[str] = frozenset()
    required_flags: tuple[str, ...] = ()
    action_classes: frozenset[str] = frozenset()


@dataclass(frozen=True)
class UsageLog:
    compute_units: int = 0
    scopes_touched: frozenset[str] = frozenset()
    info_reads: tuple[str, ...] = ()


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reasons: tuple[str, ...] = ()


@dataclass
class TaskContract:
    contract_id: str
    poster: bytes
    consequence_class: int
    escrow: int
    checklist: TaskChecklist
    bond_required: int
    reputation_gate: float
    state: ContractState = ContractState.POSTED
    worker: Optional[bytes] = None
    bond: int = 0
    verdict: Optional[Verdict] = None
    parent_contract: Optional[str] = None
    posted_tick: int = 0

    def _move(self, new_state: ContractState) -> None:
        if new_state not in _TRANSITIONS[self.state]:
            raise ContractStateError(
                f"contract {self.contract_id}: {self.state.value} -> {new_state.value} not permitted"
            )
        self.state = new_state

    @property
    def escrow_locked(self) -> bool:
        return self.state in (
            ContractState.POSTED,
            ContractState.ACCEPTED,
            ContractState.DELIVERED,
            ContractState.JUDGED_PASS,
            ContractState.JUDGED_FAIL,
        )

    @property
    def bond_locked(self) -> bool:
        return self.state in (
            ContractState.ACCEPTED,
            ContractState.DELIVERED,
            ContractState.JUDGED_PASS,
            ContractState.JUDGED_FAIL,
        )


@dataclass(frozen=True)
class Role:
    name: str
    action_classes: frozenset[str]
    data_scopes: frozenset[str]


@dataclass
class SubMarket:
    sub_market_id: str
    parent: Optional[str] = None
    members: set[bytes] = field(default_factory=set)
    tax_multiplier: int = 1
    allowed_classes: Optional[frozenset[str]] = None  # None = all classes
    paused: bool = False


@dataclass(frozen=True)
class GatewayRule:
    source: str
    target: str
    action_class: str
    fee: int


@dataclass(frozen=True)
class MarketPolicy:
    """Per-class gating tables and settlement parameters."""

    bond_base: int = 25                      # bond for class k is bond_base * 2**k
    reputation_gates: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.75)
    forfeit_split: float = 0.5               # insurance share of a forfeited bond
    certificate_class: int = 3               # classes >= this need a robustness certificate
    insurance_class: int = 2                 # classes >= this need insurance cover (when enabled)

    def bond_for_class(self, k: int) -> int:
        return self.bond_base * (2 ** k)

    def gate_for_class(self, k: int) -> float:
        return self.reputation_gates[k]


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: str = ""
    gateway_fee: int = 0


class ChecklistJudge:
    """Deterministic pass/fail oracle over a contract checklist."""

    def judge(self, contract: TaskContract, artifact: Mapping[str, Any], usage: UsageLog) -> Verdict:
        reasons: list[str] = []
        missing = [f for f in contract.checklist.required_fields if f not in artifact]
        if missing:
            reasons.append("schema")
        if usage.compute_units > contract.checklist.compute_cap:
            reasons.append("compute-cap")
        if usage.scopes_touched & contract.checklist.prohibited_scopes:
            reasons.append("prohibited-scope")
        for flag in contract.checklist.required_flags:
            if not artifact.get(flag, False):
                reasons.append("constitutional")
                break
        return Verdict(passed=not reasons, reasons=tuple(reasons))


def round_half_up(x: float) -> int:
    """Half-up rounding for non-negative money formulas."""
    if x < 0:
        raise ValueError("money values are non-negative")
    return int(x + 0.5)


class Market:
    """Single-writer market state: accounts, contracts, roles, sub-markets."""

    def __init__(
        self,
        chain: LedgerChain,
        registry: IdentityRegistry,
        pools: Pools,
        roles: Iterable[Role],
        sub_markets: Iterable[SubMarket],
        gateways: Iterable[GatewayRule] = (),
        policy: MarketPolicy = MarketPolicy(),
        judge: Optional[ChecklistJudge] = None,
    ) -> None:
        self.chain = chain
        self.registry = registry
        self.pools = pools
        self.roles = {r.name: r for r in roles}
        self.sub_markets = {m.sub_market_id: m for m in sub_markets}
        self.gateways = {(g.source, g.target, g.action_class): g.fee for g in gateways}
        self.policy = policy
        self.judge = judge or ChecklistJudge()
        self.accounts: dict[bytes, Account] = {}
        self.contracts: dict[str, TaskContract] = {}
        self.insured: set[bytes] = set()
        self._contract_counter = itertools.count()

    # -- accounts ----------------------------------------------------------

    def open_account(self, agent_id: bytes, endowment: int = 0) -> Account:
        if agent_id in self.accounts:
            raise MarketError("account already open")
        acct = Account(agent_id=agent_id, balance=endowment)
        self.accounts[agent_id] = acct
        return acct

    def account(self, agent_id: bytes) -> Account:
        try:
            return self.accounts[agent_id]
        except KeyError:
            raise MarketError(f"no account for {agent_id.hex()[:12]}") from None

    def total_issuance(self) -> int:
        # The worker bond lives in account.staked while locked, so only
        # escrow is counted on the contract side.
        locked = sum(c.escrow for c in self.contracts.values() if c.escrow_locked)
        held = sum(a.balance + a.staked for a in self.accounts.values())
        return held + locked + self.pools.treasury + self.pools.insurance

    def transfer(self, from_id: bytes, to_id: bytes, amount: int, tick: int, tax: int = 0,
                 note: str = "") -> None:
        if amount < 0 or tax < 0:
            raise MarketError("negative amount")
        sender = self.account(from_id)
        record = self.registry.get(from_id)
        if record.state in (AgentState.HALTED, AgentState.REVOKED):
            raise MarketError(f"actor is {record.state.value}")
        if sender.frozen:
            raise FrozenAccountError("sender account frozen")
        if sender.balance < amount + tax:
            raise InsufficientFundsError(
                f"balance {sender.balance} < amount {amount} + tax {tax}"
            )
        sender.balance -= amount + tax
        self.account(to_id).balance += amount
        self.pools.treasury += tax
        payload = {"to": to_id, "amount": amount, "tax": tax}
        if note:
            payload["note"] = note
        self.chain.append(EntryKind.TRANSFER, from_id, payload, tick)

    # -- contracts -----------------------------------------------------------

    def post_task(
        self,
        poster: bytes,
        consequence_class: int,
        escrow: int,
        checklist: TaskChecklist,
        tick: int,
        parent_contract: Optional[str] = None,
    ) -> TaskContract:
        if not 0 <= consequence_class <= 4:
            raise MarketError(f"consequence class {consequence_class} outside 0-4")
        acct = self.account(poster)
        if acct.frozen:
            raise FrozenAccountError("poster account frozen")
        if acct.balance < escrow:
            raise InsufficientFundsError(f"balance {acct.balance} < escrow {escrow}")
        acct.balance -= escrow
        contract = TaskContract(
            contract_id=f"c{next(self._contract_counter):06d}",
            poster=poster,
            consequence_class=consequence_class,
            escrow=escrow,
            checklist=checklist,
            bond_required=self.policy.bond_for_class(consequence_class),
            reputation_gate=self.policy.gate_for_class(consequence_class),
            parent_contract=parent_contract,
            posted_tick=tick,
        )
        self.contracts[contract.contract_id] = contract
        payload = {
            "contract": contract.contract_id,
            "class": consequence_class,
            "escrow": escrow,
            "bond": contract.bond_required,
        }
        if parent_contract is not None:
            payload["parent_contract"] = parent_contract
        self.chain.append(EntryKind.TASK_POSTED, poster, payload, tick)
        return contract

    def accept_task(
        self,
        contract: TaskContract,
        worker: bytes,
        effective_reputation: float,
        tick: int,
        insurance_required: bool = False,
    ) -> TaskContract:
        if contract.state is not ContractState.POSTED:
            raise ContractStateError(f"contract is {contract.state.value}, not posted")
        record = self.registry.get(worker)
        if record.state is not AgentState.ACTIVE:
            raise GateError("state", record.state.value)
        if effective_reputation < contract.reputation_gate:
            raise GateError("reputation",
                            f"{effective_reputation:.3f} < {contract.reputation_gate}")
        acct = self.account(worker)
        if acct.balance < contract.bond_required:
            raise GateError("bond", f"balance {acct.balance} < {contract.bond_required}")
        granted = self._granted_classes(record)
        if not contract.checklist.action_classes <= granted:
            raise GateError("role", str(sorted(contract.checklist.action_classes - granted)))
        if contract.consequence_class >= self.policy.certificate_class and not record.robustness_certified:
            raise GateError("certificate")
        if insurance_required and contract.consequence_class >= self.policy.insurance_class \
                and worker not in self.insured:
            raise GateError("insurance")
        acct.balance -= contract.bond_required
        acct.staked += contract.bond_required
        contract.worker = worker
        contract.bond = contract.bond_required
        contract._move(ContractState.ACCEPTED)
        self.chain.append(
            EntryKind.TASK_ACCEPTED,
            worker,
            {"contract": contract.contract_id, "bond": contract.bond},
            tick,
        )
        return contract

    def deliver_and_judge(
        self,
        contract: TaskContract,
        artifact: Mapping[str, Any],
        usage: UsageLog,
        tick: int,
    ) -> Verdict:
        if contract.state is not ContractState.ACCEPTED:
            raise ContractStateError(f"contract is {contract.state.value}, not accepted")
        contract._move(ContractState.DELIVERED)
        self.chain.append(
            EntryKind.TASK_DELIVERED,
            contract.worker,
            {
                "contract": contract.contract_id,
                "compute": usage.compute_units,
                "scopes": sorted(usage.scopes_touched),
                "info_reads": list(usage.info_reads),
            },
            tick,
        )
        verdict = self.judge.judge(contract, artifact, usage)
        contract.verdict = verdict
        contract._move(ContractState.JUDGED_PASS if verdict.passed else ContractState.JUDGED_FAIL)
        self.chain.append(
            EntryKind.VERDICT,
            SYSTEM_ACTOR,
            {
                "contract": contract.contract_id,
                "passed": verdict.passed,
                "reasons": list(verdict.reasons),
            },
            tick,
        )
        return verdict

    def settle(self, contract: TaskContract, tick: int) -> str:
        """Execute the judged outcome; returns "pass" or "fail"."""
        if contract.state is ContractState.JUDGED_PASS:
            worker = self.account(contract.worker)
            worker.balance += contract.escrow
            worker.staked -= contract.bond
            worker.balance += contract.bond
            contract._move(ContractState.SETTLED)
            self.chain.append(
                EntryKind.SETTLE,
                contract.worker,
                {"contract": contract.contract_id, "paid": contract.escrow,
                 "bond_returned": contract.bond},
                tick,
            )
            return "pass"
        if contract.state is ContractState.JUDGED_FAIL:
            poster = self.account(contract.poster)
            worker = self.account(contract.worker)
            poster.balance += contract.escrow
            worker.staked -= contract.bond
            insurance_share = round_half_up(contract.bond * self.policy.forfeit_split)
            poster_share = contract.bond - insurance_share
            self.pools.insurance += insurance_share
            poster.balance += poster_share
            contract._move(ContractState.FORFEITED)
            self.chain.append(
                EntryKind.FORFEIT,
                contract.worker,
                {"contract": contract.contract_id, "escrow_returned": contract.escrow,
                 "to_insurance": insurance_share, "to_poster": poster_share},
                tick,
            )
            return "fail"
        raise ContractStateError(f"cannot settle contract in state {contract.state.value}")

    def cancel(self, contract: TaskContract, tick: int, reason: str = "") -> None:
        contract._move(ContractState.CANCELLED)
        self.account(contract.poster).balance += contract.escrow
        self.chain.append(
            EntryKind.SETTLE,
            contract.poster,
            {"contract": contract.contract_id, "cancelled": True, "reason": reason},
            tick,
        )

    def open_contracts_for(self, agent_id: bytes) -> list[TaskContract]:
        return [
            c for c in self.contracts.values()
            if (c.poster == agent_id or c.worker == agent_id)
            and c.state in (ContractState.POSTED, ContractState.ACCEPTED)
        ]

    # -- access control ------------------------------------------------------

    def _granted_classes(self, record: AgentRecord) -> frozenset[str]:
        out: set[str] = set()
        for name in record.roles:
            role = self.roles.get(name)
            if role:
                out |= role.action_classes
        return frozenset(out)

    def _granted_scopes(self, record: AgentRecord) -> frozenset[str]:
        out: set[str] = set()
        for name in record.roles:
            role = self.roles.get(name)
            if role:
                out |= role.data_scopes
        return frozenset(out)

    def check_access(
        self,
        agent_id: bytes,
        action_class: str,
        data_scope: str,
        target_sub_market: Optional[str] = None,
    ) -> AccessDecision:
        record = self.registry.get(agent_id)
        if record.state is not AgentState.ACTIVE:
            return AccessDecision(False, "state")
        if action_class not in self._granted_classes(record):
            return AccessDecision(False, "action-class")
        if data_scope not in self._granted_scopes(record):
            return AccessDecision(False, "data-scope")
        target = target_sub_market or record.sub_market
        fee = 0
        if target != record.sub_market:
            key = (record.sub_market, target, action_class)
            if key not in self.gateways:
                return AccessDecision(False, "gateway")
            fee = self.gateways[key]
        market = self.sub_markets.get(target)
        if market is None:
            return AccessDecision(False, "gateway")
        if market.paused:
            return AccessDecision(False, "paused")
        if market.allowed_classes is not None and action_class not in market.allowed_classes:
            return AccessDecision(False, "paused" if market.paused else "market-class")
        return AccessDecision(True, gateway_fee=fee)

    def charge_gateway_fee(self, agent_id: bytes, fee: int, tick: int) -> None:
        if fee <= 0:
            return
        acct = self.account(agent_id)
        if acct.balance < fee:
            raise InsufficientFundsError("cannot cover gateway fee")
        acct.balance -= fee
        self.pools.treasury += fee
