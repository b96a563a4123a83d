"""Deterministic tick-synchronous kernel.

Each tick: (1) apply queued oversight commands, (2) let agents plan
against an immutable start-of-tick view and execute their actions in
ascending agent-id order through the local gate, access control and
economics, (3) run the risk sentinels and breakers, (4) publish a
snapshot, (5) emit a metrics row. A run is a pure function of the
scenario configuration: the chain's genesis digest is the hash of the
canonical config bytes, and one PRNG per run is split into named
substreams (per-agent behavior, jitter, sanitizer, public signal) so
adding a stream never perturbs the others.

The conservation identity (balances + stakes + locked escrow + pools ==
initial issuance) is asserted after every tick.
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

import numpy as np

from . import forensics, reputation as rep
from .economics import InfoStore, MessageMeter, SurgeState, ingestion_fee, message_tax, premium
from .guard import (
    HaltState,
    LocalGate,
    MissingClearanceError,
    Payload,
    halt as guard_halt,
    ifc_check,
    resume as guard_resume,
    tree_frozen_contracts,
)
from .ledger import (
    SYSTEM_ACTOR,
    AgentState,
    EntryKind,
    IdentityRegistry,
    LedgerChain,
)
from .market import (
    ChecklistJudge,
    ContractState,
    ContractStateError,
    GateError,
    Market,
    MarketError,
    Pools,
    TaskChecklist,
    UsageLog,
)
from .policies import (
    AcceptTask,
    Action,
    BuyCompute,
    BuyInsurance,
    DeliverTask,
    InfoAd,
    IngestInfo,
    MarketView,
    OwnContract,
    Policy,
    PostTask,
    ReRegister,
    SendMessage,
    SetPrice,
    SpawnAgent,
    TaskAd,
    Transfer,
    build_policy,
)
from .scenario import Scenario
from .sentinel import (
    BreakerState,
    IndicatorEngine,
    JitterStream,
    detect_coalitions,
    detect_cycles,
    detect_tacit,
    evaluate_breakers,
    expire_breakers,
    meta_nodes,
    power_flags,
    power_index,
)

# Access-control mapping for built-in action types; deliveries are gated
# at accept time and settlement is contract execution, not a new action.
ACTION_CLASS = {
    SendMessage: ("message", "public"),
    Transfer: ("transfer", "public"),
    PostTask: ("post-task", "public"),
    AcceptTask: ("accept-task", "public"),
    IngestInfo: ("ingest", "public"),
    SetPrice: ("set-price", "public"),
    BuyCompute: ("buy", "public"),
    BuyInsurance: ("buy", "public"),
    SpawnAgent: ("spawn", "public"),
}

# Consequence class of a transfer by amount band; the flow-control gate
# needs a deterministic basis for "high-consequence".
TRANSFER_CLASS_BANDS = ((100, 0), (500, 1), (1000, 2), (5000, 3))


def transfer_consequence_class(amount: int) -> int:
    for bound, klass in TRANSFER_CLASS_BANDS:
        if amount < bound:
            return klass
    return 4


def substream(seed: int, name: str) -> np.random.Generator:
    """Named RNG substream: independent of every other name."""
    digest = hashlib.sha256(seed.to_bytes(8, "big", signed=False) + name.encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class Intervention:
    kind: str                        # pause|resume|quarantine|set_tax_multiplier|
    #                                  trigger_tier|approve_gate|classify_anomaly
    target: str                      # "agent:<hex>" | "market:<id>" | "global" | source id
    issuer: str
    clearance: Optional[str] = None
    value: Optional[int] = None      # multiplier / tier
    duration: int = 64
    command_id: int = 0


@dataclass
class RunResult:
    scenario: Scenario
    chain: LedgerChain
    head_hash: bytes
    metrics: list[dict[str, Any]]
    events: list[dict[str, Any]]
    summary: dict[str, Any]
    kernel: "Kernel"


class Kernel:
    """Single-writer simulation state plus the tick loop."""

    def __init__(self, scenario: Scenario, output_dir: Optional[str] = None) -> None:
        self.scenario = scenario
        self.output_dir = output_dir
        config_bytes = scenario.canonical_bytes()
        self.chain = LedgerChain.from_config_bytes(config_bytes)
        self.registry = IdentityRegistry(self.chain, {r.name for r in scenario.roles})
        self.pools = Pools()
        self.market = Market(
            self.chain, self.registry, self.pools,
            roles=scenario.roles,
            sub_markets=[m for m in scenario.sub_markets],
            gateways=scenario.gateways,
            policy=scenario.market_policy,
            judge=ChecklistJudge(),
        )
        self._base_tax_multiplier = {
            m.sub_market_id: m.tax_multiplier for m in scenario.sub_markets
        }
        self.info_store = InfoStore(scenario.embedding_dim)
        self.meter = MessageMeter(scenario.econ.tax_window)
        self.surge = SurgeState()
        self.indicators = IndicatorEngine(scenario.monitor)
        jitter_seed = scenario.jitter_seed
        if jitter_seed is None:
            jitter_seed = int.from_bytes(
                hashlib.sha256(b"jitter" + scenario.seed.to_bytes(8, "big")).digest()[:8], "big")
        self.jitter = JitterStream(jitter_seed, scenario.monitor)
        self.sanitizer_rng = substream(scenario.seed, "sanitizer")
        self.signal_rng = substream(scenario.seed, "signal")
        self.local_gate = LocalGate(p_detect=scenario.sanitizer_p_detect)

        self.reputations: dict[bytes, rep.ReputationRecord] = {}
        self.policies: dict[bytes, Policy] = {}
        self.agent_rng: dict[bytes, np.random.Generator] = {}
        self.cohort_of: dict[bytes, str] = {}
        self.resource_units: dict[bytes, int] = {}
        self.insured_until: dict[bytes, int] = {}
        self.prices: dict[str, dict[bytes, int]] = {}
        self.price_history: dict[str, dict[bytes, list[float]]] = {}
        self.rekey_links: list[tuple[bytes, bytes]] = []
        self.approvals: set[str] = set()
        self.breakers: dict[str, BreakerState] = {}
        self.halts: dict[bytes, HaltState] = {}
        self.global_halt = False
        self.market_signal = 0.0
        self.rate_limited_until: dict[bytes, int] = {}
        self.t2_restore: dict[str, int] = {}

        self._msg_counts: dict[bytes, int] = {}
        self._spawn_counts: dict[bytes, int] = {}
        self._ingest_count = 0
        self._transfer_log: list[tuple[int, bytes, bytes, int]] = []
        self._message_edges: list[tuple[int, bytes, bytes]] = []
        self._success: dict[bytes, dict[int, list[int]]] = {}
        # Fast view indexes: live contract ids per agent plus recency of
        # terminal states, so views never scan the full contract history.
        self._contracts_of: dict[bytes, set[str]] = {}
        self._posted_ids: set[str] = set()
        self._terminal_tick: dict[str, int] = {}
        self.settled_volume: dict[str, int] = {}
        self.coalition_reports: list[dict[str, Any]] = []
        self.ring_flags: list[dict[str, Any]] = []
        self.tacit_flags: list[dict[str, Any]] = []
        self._prev_power: dict[bytes, float] = {}

        self.metrics: list[dict[str, Any]] = []
        self.events: list[dict[str, Any]] = []
        self.snapshot: dict[str, Any] = {}
        self.tick = 0
        self.commands: "queue.Queue[Intervention]" = queue.Queue()
        self._command_acks: dict[int, int] = {}
        self._stop = threading.Event()

        self._register_cohorts()
        self.initial_issuance = self.market.total_issuance()

    # -- setup ---------------------------------------------------------------

    def _register_cohorts(self) -> None:
        scenario = self.scenario
        for cohort in scenario.cohorts:
            shared_owner = f"owner-{cohort.name}"
            if cohort.owners == "shared":
                self.registry.register_owner(shared_owner)
            member_ids: list[bytes] = []
            policies: list[Policy] = []
            for i in range(cohort.count):
                owner = shared_owner if cohort.owners == "shared" else f"owner-{cohort.name}-{i}"
                if cohort.owners != "shared":
                    self.registry.register_owner(owner)
                public_key = f"pk:{scenario.seed}:{cohort.name}:{i}".encode()
                record = self.registry.register_agent(
                    public_key, owner, set(cohort.roles),
                    self._cohort_capabilities(cohort, i),
                    cohort.sub_market, tick=0,
                    robustness_certified=cohort.certified,
                )
                self.market.open_account(record.agent_id, cohort.endowment)
                self.market.sub_markets[cohort.sub_market].members.add(record.agent_id)
                self.reputations[record.agent_id] = rep.new_record(
                    record.agent_id, 0, scenario.reputation)
                self.resource_units[record.agent_id] = cohort.resource_units
                self.cohort_of[record.agent_id] = cohort.name
                policy = build_policy(cohort.policy_kind, cohort.policy_params)
                self.policies[record.agent_id] = policy
                self.agent_rng[record.agent_id] = substream(
                    scenario.seed, f"agent:{cohort.name}:{i}")
                member_ids.append(record.agent_id)
                policies.append(policy)
            for i, (agent_id, policy) in enumerate(zip(member_ids, policies)):
                params = dict(cohort.policy_params)
                params.setdefault("embedding_dim", scenario.embedding_dim)
                policy.bind(agent_id, member_ids, i, params)
            self.settled_volume.setdefault(cohort.name, 0)

    def _cohort_capabilities(self, cohort, i: int) -> frozenset[str]:
        if cohort.capabilities:
            return frozenset(cohort.capabilities)
        taxonomy = list(self.scenario.capability_taxonomy)
        if not taxonomy:
            return frozenset()
        if cohort.policy_kind == "proto-agi-coalition":
            # Complementary pairs marching through the taxonomy.
            span = max(1, len(taxonomy) - 2)
            return frozenset({taxonomy[i % span], taxonomy[(i + 2) % span]})
        return frozenset({taxonomy[i % len(taxonomy)]})

    # -- events / logging ------------------------------------------------------

    def _event(self, kind: str, **data) -> None:
        row = {"tick": self.tick, "event": kind, **data}
        self.events.append(row)

    def _flag(self, actor: bytes, payload: Mapping[str, Any]) -> None:
        self.chain.append(EntryKind.FLAG, actor, dict(payload), self.tick)
        self._event("flag", actor=actor.hex(), **{
            k: (v.hex() if isinstance(v, bytes) else v) for k, v in payload.items()
            if isinstance(v, (int, str, bool, bytes))
        })

    # -- command surface -------------------------------------------------------

    def submit(self, intervention: Intervention) -> None:
        self.commands.put(intervention)

    def ack_tick(self, command_id: int) -> Optional[int]:
        return self._command_acks.get(command_id)

    def _apply_commands(self) -> None:
        while True:
            try:
                cmd = self.commands.get_nowait()
            except queue.Empty:
                return
            try:
                self._apply_one(cmd)
            except Exception as exc:  # surfaced in the event stream, not fatal
                self._event("intervention-error", kind=cmd.kind, error=str(exc))
            self._command_acks[cmd.command_id] = self.tick

    def _scope_agent(self, target: str) -> bytes:
        if not target.startswith("agent:"):
            raise ValueError(f"expected agent scope, got {target!r}")
        return bytes.fromhex(target[len("agent:"):])

    def _apply_one(self, cmd: Intervention) -> None:
        applied = {"kind": cmd.kind, "target": cmd.target, "issuer": cmd.issuer}
        if cmd.kind == "pause":
            if cmd.target == "global":
                self.global_halt = True
            elif cmd.target.startswith("market:"):
                self.market.sub_markets[cmd.target[len("market:"):]].paused = True
            else:
                agent = self._scope_agent(cmd.target)
                if agent not in self.halts:
                    self.halts[agent] = guard_halt(
                        self.chain, self.registry, self.market, agent,
                        self.tick, issuer=cmd.issuer)
        elif cmd.kind == "resume":
            if not cmd.clearance:
                raise MissingClearanceError("resume requires a classification")
            if cmd.target == "global":
                self.global_halt = False
                self.breakers.pop("global", None)
            elif cmd.target.startswith("market:"):
                market_id = cmd.target[len("market:"):]
                self.market.sub_markets[market_id].paused = False
                self.breakers.pop(cmd.target, None)
            else:
                agent = self._scope_agent(cmd.target)
                state = self.halts.pop(agent, None)
                if state is None:
                    raise ValueError("target is not halted")
                guard_resume(self.chain, self.registry, state, self.tick,
                             cmd.clearance, issuer=cmd.issuer)
            applied["clearance"] = cmd.clearance
        elif cmd.kind == "quarantine":
            agent = self._scope_agent(cmd.target)
            self.registry.set_state(agent, AgentState.QUARANTINED)
        elif cmd.kind == "set_tax_multiplier":
            factor = int(cmd.value or 1)
            self.surge.activate(max(1, factor), cmd.duration, self.tick)
            applied["factor"] = factor
        elif cmd.kind == "trigger_tier":
            tier = int(cmd.value or 0)
            self._apply_breaker_effects([_forced_transition(self.tick, tier, cmd.target)])
            applied["tier"] = tier
        elif cmd.kind == "approve_gate":
            self.approvals.add(cmd.target)
        elif cmd.kind == "classify_anomaly":
            state = self.breakers.get(cmd.target)
            if state is None:
                raise ValueError(f"no pending breaker for {cmd.target!r}")
            state.classification_pending = False
            if state.tier == 3 and cmd.target.startswith("market:"):
                self.market.sub_markets[cmd.target[len("market:"):]].paused = False
            if state.tier == 4 and cmd.target == "global":
                self.global_halt = False
            self.breakers.pop(cmd.target, None)
            applied["classification"] = cmd.clearance or "unclassified"
        else:
            raise ValueError(f"unknown intervention kind {cmd.kind!r}")
        self.chain.append(EntryKind.INTERVENTION, SYSTEM_ACTOR, applied, self.tick)
        self._event("intervention", **applied)

    # -- planning and execution --------------------------------------------------

    def _acting_ids(self) -> list[bytes]:
        out = []
        for agent_id in sorted(self.registry.agents):
            state = self.registry.agents[agent_id].state
            if state in (AgentState.ACTIVE, AgentState.RATE_LIMITED):
                out.append(agent_id)
        return out

    def _index_contract(self, contract) -> None:
        self._contracts_of.setdefault(contract.poster, set()).add(contract.contract_id)
        if contract.worker is not None:
            self._contracts_of.setdefault(contract.worker, set()).add(contract.contract_id)

    def _mark_terminal(self, contract) -> None:
        self._posted_ids.discard(contract.contract_id)
        self._terminal_tick[contract.contract_id] = self.tick

    def _sweep_indexes(self) -> None:
        # Contracts stay visible briefly after settlement; drop them after.
        horizon = self.tick - 16
        stale = {cid for cid, t in self._terminal_tick.items() if t < horizon}
        if not stale:
            return
        for ids in self._contracts_of.values():
            ids -= stale
        for cid in stale:
            del self._terminal_tick[cid]

    def _build_view(self, agent_id: bytes, shared: dict[str, Any]) -> MarketView:
        record = self.registry.agents[agent_id]
        account = self.market.accounts[agent_id]
        frozen: frozenset[str] = shared["frozen"]
        own = tuple(
            OwnContract(
                contract_id=c.contract_id,
                role="poster" if c.poster == agent_id else "worker",
                state=c.state.value,
                escrow=c.escrow,
                frozen=c.contract_id in frozen,
            )
            for c in (self.market.contracts[cid]
                      for cid in sorted(self._contracts_of.get(agent_id, ())))
        )
        multiplier = shared["surge"] * self.market.sub_markets[record.sub_market].tax_multiplier
        return MarketView(
            tick=self.tick,
            self_id=agent_id,
            balance=account.balance,
            staked=account.staked,
            state=record.state.value,
            sub_market=record.sub_market,
            insured=self.insured_until.get(agent_id, -1) >= self.tick,
            open_tasks=shared["open_tasks"],
            own_contracts=own,
            peers=shared["peers"],
            observable_reputation=shared["observable"],
            market_signal=self.market_signal,
            latest_info=shared["latest_info"],
            price_board=shared["price_board"],
            msg_window_count=self.meter.window_count(agent_id, self.tick),
            tau_effective=self.scenario.econ.tau_base * multiplier,
            m_free=self.scenario.econ.m_free,
            beta=self.scenario.econ.beta,
        )

    def _shared_view_parts(self) -> dict[str, Any]:
        frozen = tree_frozen_contracts(self.halts.values())
        open_tasks = tuple(
            TaskAd(
                contract_id=c.contract_id,
                consequence_class=c.consequence_class,
                escrow=c.escrow,
                bond_required=c.bond_required,
                reputation_gate=c.reputation_gate,
                action_classes=c.checklist.action_classes,
                poster=c.poster,
                parent_contract=c.parent_contract,
            )
            for c in (self.market.contracts[cid] for cid in sorted(self._posted_ids))
            if c.state is ContractState.POSTED and c.contract_id not in frozen
        )
        observable = None
        if self.scenario.reputation.observable:
            observable = {a: r.score for a, r in self.reputations.items()}
        return {
            "frozen": frozen,
            "open_tasks": open_tasks,
            "observable": observable,
            "peers": tuple(sorted(
                a for a, r in self.registry.agents.items()
                if r.state is not AgentState.REVOKED)),
            "latest_info": tuple(
                InfoAd(e.entry_id, e.verified, e.content)
                for e in self.info_store.entries[-5:]),
            "price_board": {c: dict(v) for c, v in self.prices.items()},
            "surge": self.surge.effective_factor(self.tick),
        }

    def _effective_reputation(self, agent_id: bytes) -> float:
        return rep.effective_reputation(
            self.reputations[agent_id], self.market.accounts[agent_id],
            self.tick, self.scenario.reputation)

    def _plan_phase(self) -> list[tuple[bytes, list[Action]]]:
        plans = []
        shared = self._shared_view_parts()
        for agent_id in self._acting_ids():
            policy = self.policies.get(agent_id)
            if policy is None:
                continue
            view = self._build_view(agent_id, shared)
            actions = policy.act(view, self.agent_rng[agent_id])
            if actions:
                plans.append((agent_id, actions))
        return plans

    def _execute_phase(self, plans: list[tuple[bytes, list[Action]]]) -> None:
        # Resolve contested task claims first: reputation priority when the
        # reputation layer is observable, claim order otherwise.
        claims: dict[str, list[bytes]] = {}
        for agent_id, actions in plans:
            for action in actions:
                if isinstance(action, AcceptTask):
                    claims.setdefault(action.contract_id, []).append(agent_id)
        awarded: dict[str, bytes] = {}
        for contract_id in sorted(claims):
            claimants = claims[contract_id]
            if self.scenario.reputation.observable:
                # Visible quality: the most trusted claimant gets the work.
                claimants = sorted(
                    claimants, key=lambda a: (-self._effective_reputation(a), a))
            else:
                # Hidden quality: the fastest actor gets there first.
                claimants = sorted(
                    claimants,
                    key=lambda a: (getattr(self.policies.get(a), "act_every", 1), a))
            awarded[contract_id] = claimants[0]

        frozen = tree_frozen_contracts(self.halts.values())
        for agent_id, actions in plans:
            record = self.registry.agents[agent_id]
            if record.state not in (AgentState.ACTIVE, AgentState.RATE_LIMITED):
                continue  # state may have changed mid-tick (quarantine etc.)
            sent_messages = 0
            actions_count = 0
            for action in actions:
                actions_count += 1
                if isinstance(action, AcceptTask) and awarded.get(action.contract_id) != agent_id:
                    continue
                if isinstance(action, SendMessage):
                    if record.state is AgentState.RATE_LIMITED and \
                            sent_messages >= self.scenario.monitor.rate_limit:
                        continue
                try:
                    executed = self._execute_action(agent_id, action, actions_count, frozen)
                except (MarketError, GateError, ContractStateError):
                    continue
                if executed and isinstance(action, SendMessage):
                    sent_messages += 1

    def _execute_action(self, agent_id: bytes, action: Action,
                        actions_count: int, frozen: frozenset[str]) -> bool:
        record = self.registry.agents[agent_id]

        # Local containment gate runs before anything touches the market.
        mapping = ACTION_CLASS.get(type(action))
        declared = mapping[0] if mapping else None
        output_payload = getattr(action, "payload", None) or getattr(action, "content", None)
        granted = self.market._granted_classes(record)
        gate = self.local_gate.check(
            actions_count - 1, output_payload, declared, granted, self.sanitizer_rng)
        if not gate.passed:
            if gate.reason == "quarantine":
                self._flag(agent_id, {"hold": gate.reason, "action": type(action).__name__})
                self._record_violation(agent_id)
            return False

        if mapping is not None:
            decision = self.market.check_access(agent_id, mapping[0], mapping[1], None)
            if not decision.allowed:
                self._flag(agent_id, {"deny": decision.reason, "action": type(action).__name__})
                return False

        handler = getattr(self, f"_do_{type(action).__name__.lower()}")
        return handler(agent_id, action, frozen)

    # -- action handlers ----------------------------------------------------

    def _do_sendmessage(self, agent_id: bytes, action: SendMessage, frozen) -> bool:
        window_count = self.meter.window_count(agent_id, self.tick)
        record = self.registry.agents[agent_id]
        multiplier = self.surge.effective_factor(self.tick) * \
            self.market.sub_markets[record.sub_market].tax_multiplier
        tax = message_tax(window_count, self.scenario.econ, multiplier)
        account = self.market.accounts[agent_id]
        if account.balance < tax or account.frozen:
            return False
        account.balance -= tax
        self.pools.treasury += tax
        self.meter.record(agent_id, self.tick)
        payload: dict[str, Any] = {"to": action.recipient, "size": action.size, "tax": tax}
        if action.payload is not None and action.payload.external_sources:
            payload["sources"] = sorted(action.payload.external_sources)
        self.chain.append(EntryKind.MESSAGE, agent_id, payload, self.tick)
        self._msg_counts[agent_id] = self._msg_counts.get(agent_id, 0) + 1
        self._message_edges.append((self.tick, agent_id, action.recipient))
        return True

    def _do_transfer(self, agent_id: bytes, action: Transfer, frozen) -> bool:
        klass = transfer_consequence_class(action.amount)
        taints = [action.payload.taint] if action.payload is not None else []
        decision = ifc_check(klass, taints, frozenset(self.approvals),
                             self.scenario.ifc_class_gate)
        if not decision.allowed:
            self._flag(agent_id, {
                "blocked": "transfer", "reason": decision.reason,
                "class": klass, "amount": action.amount,
                "sources": sorted(decision.blocking_sources),
                "note": action.note,
            })
            return False
        tax = self.scenario.econ.transfer_tax
        self.market.transfer(agent_id, action.to, action.amount, self.tick,
                             tax=tax, note=action.note)
        self._transfer_log.append((self.tick, agent_id, action.to, action.amount))
        return True

    def _do_posttask(self, agent_id: bytes, action: PostTask, frozen) -> bool:
        checklist = TaskChecklist(
            required_fields=tuple(action.required_fields),
            compute_cap=action.compute_cap,
            prohibited_scopes=frozenset(action.prohibited_scopes),
            required_flags=tuple(action.required_flags),
            action_classes=frozenset(action.action_classes),
        )
        contract = self.market.post_task(
            agent_id, action.consequence_class, action.escrow,
            checklist, self.tick, action.parent_contract)
        self._posted_ids.add(contract.contract_id)
        self._index_contract(contract)
        return True

    def _do_accepttask(self, agent_id: bytes, action: AcceptTask, frozen) -> bool:
        contract = self.market.contracts.get(action.contract_id)
        if contract is None or contract.contract_id in frozen:
            return False
        self.market.accept_task(
            contract, agent_id, self._effective_reputation(agent_id), self.tick,
            insurance_required=self.scenario.premiums_enabled
            and self.insured_until.get(agent_id, -1) < self.tick,
        )
        self._posted_ids.discard(contract.contract_id)
        self._index_contract(contract)
        return True

    def _do_delivertask(self, agent_id: bytes, action: DeliverTask, frozen) -> bool:
        contract = self.market.contracts.get(action.contract_id)
        if contract is None or contract.worker != agent_id:
            return False
        if contract.contract_id in frozen:
            return False
        usage = UsageLog(
            compute_units=action.compute_units,
            scopes_touched=frozenset(action.scopes_touched),
            info_reads=tuple(action.info_reads),
        )
        verdict = self.market.deliver_and_judge(contract, action.artifact, usage, self.tick)
        outcome = self.market.settle(contract, self.tick)
        self._mark_terminal(contract)
        event = "pass" if outcome == "pass" else "fail"
        self.reputations[agent_id] = rep.update(
            self.reputations[agent_id], event, self.scenario.reputation)
        bucket = self.tick // self.scenario.monitor.epoch
        slot = self._success.setdefault(agent_id, {}).setdefault(bucket, [0, 0])
        slot[1] += 1
        if event == "pass":
            slot[0] += 1
            self.settled_volume[self.cohort_of.get(agent_id, "?")] = \
                self.settled_volume.get(self.cohort_of.get(agent_id, "?"), 0) + contract.escrow
            self._transfer_log.append((self.tick, contract.poster, agent_id, contract.escrow))
        else:
            self._flag(SYSTEM_ACTOR, {
                "escalation": "contract-fail", "contract": contract.contract_id,
                "worker": agent_id, "reasons": list(verdict.reasons),
            })
        return True

    def _do_ingestinfo(self, agent_id: bytes, action: IngestInfo, frozen) -> bool:
        embedding = np.asarray(action.embedding, dtype=np.float64)
        norm = np.linalg.norm(embedding)
        if norm == 0:
            return False
        embedding = embedding / norm
        r = self.info_store.redundancy(embedding)
        fee = ingestion_fee(r, self.scenario.econ)
        account = self.market.accounts[agent_id]
        if account.balance < fee or account.frozen:
            return False
        account.balance -= fee
        self.pools.treasury += fee
        entry = self.info_store.add(agent_id, embedding, self.tick, content=action.content)
        if action.content is not None and action.content.external_sources == {"pending"}:
            # Rebind the provenance label to the real entry id.
            entry.content = Payload(
                values=action.content.values,
                taint=frozenset({f"external:{entry.entry_id}"}),
                injection_marker=action.content.injection_marker,
            )
        self.chain.append(EntryKind.INGEST, agent_id, {
            "entry_id": entry.entry_id, "fee": fee,
            "redundancy_micro": int(round(r * 1_000_000)),
        }, self.tick)
        self._ingest_count += 1
        return True

    def _do_setprice(self, agent_id: bytes, action: SetPrice, frozen) -> bool:
        self.prices.setdefault(action.category, {})[agent_id] = action.price
        return True

    def _do_buycompute(self, agent_id: bytes, action: BuyCompute, frozen) -> bool:
        price = action.units * 10
        account = self.market.accounts[agent_id]
        if account.balance < price or account.frozen:
            return False
        account.balance -= price
        self.pools.treasury += price
        self.resource_units[agent_id] = self.resource_units.get(agent_id, 0) + action.units
        return True

    def _do_buyinsurance(self, agent_id: bytes, action: BuyInsurance, frozen) -> bool:
        if self.insured_until.get(agent_id, -1) >= self.tick:
            return True
        cost = premium(action.intended_class, self._effective_reputation(agent_id),
                       self.scenario.econ)
        account = self.market.accounts[agent_id]
        if account.balance < cost or account.frozen:
            return False
        account.balance -= cost
        self.pools.insurance += cost
        epoch = self.scenario.monitor.epoch
        self.insured_until[agent_id] = ((self.tick // epoch) + 1) * epoch - 1
        return True

    def _do_spawnagent(self, agent_id: bytes, action: SpawnAgent, frozen) -> bool:
        key = hashlib.sha256(
            b"spawn" + agent_id + self.tick.to_bytes(8, "big")
            + len(self.registry.agents).to_bytes(4, "big")).digest()
        record = self.registry.register_agent(
            key, None, set(action.roles), set(action.capabilities),
            self.registry.agents[agent_id].sub_market, self.tick, parent=agent_id)
        self.market.open_account(record.agent_id, 0)
        self.reputations[record.agent_id] = rep.new_record(
            record.agent_id, self.tick, self.scenario.reputation)
        self.resource_units[record.agent_id] = 0
        self.cohort_of[record.agent_id] = self.cohort_of.get(agent_id, "?")
        self.policies[record.agent_id] = build_policy("idle", {})
        self.policies[record.agent_id].bind(record.agent_id, [record.agent_id], 0, {})
        self.agent_rng[record.agent_id] = substream(
            self.scenario.seed, f"spawned:{record.agent_id.hex()}")
        self._spawn_counts[agent_id] = self._spawn_counts.get(agent_id, 0) + 1
        return True

    def _do_reregister(self, agent_id: bytes, action: ReRegister, frozen) -> bool:
        if self.market.open_contracts_for(agent_id):
            return False
        old = self.registry.agents[agent_id]
        key = hashlib.sha256(b"rereg" + agent_id + self.tick.to_bytes(8, "big")).digest()
        new = self.registry.register_agent(
            key, old.owner_id, set(old.roles), set(old.capabilities),
            old.sub_market, self.tick, robustness_certified=old.robustness_certified)
        self.chain.append(EntryKind.FLAG, new.agent_id,
                          {"rekey_of": agent_id}, self.tick)
        account = self.market.accounts[agent_id]
        balance = account.balance
        account.balance = 0
        account.frozen = True
        self.market.open_account(new.agent_id, balance)
        self.market.sub_markets[new.sub_market].members.add(new.agent_id)
        self.registry.set_state(agent_id, AgentState.REVOKED)
        self.reputations[new.agent_id] = rep.new_record(
            new.agent_id, self.tick, self.scenario.reputation)
        self.resource_units[new.agent_id] = self.resource_units.pop(agent_id, 0)
        self.cohort_of[new.agent_id] = self.cohort_of.get(agent_id, "?")
        policy = self.policies.pop(agent_id)
        policy.rebind_id(new.agent_id)
        # Other cohort members keep addressing the new identity.
        for other_policy in self.policies.values():
            if agent_id in getattr(other_policy, "cohort_ids", ()):
                other_policy.cohort_ids = [
                    new.agent_id if c == agent_id else c for c in other_policy.cohort_ids]
        self._contracts_of.pop(agent_id, None)
        self.policies[new.agent_id] = policy
        self.agent_rng[new.agent_id] = self.agent_rng.pop(agent_id)
        self.rekey_links.append((agent_id, new.agent_id))
        # Success history carries over for the sentinel's series.
        if agent_id in self._success:
            self._success[new.agent_id] = self._success.pop(agent_id)
        return True

    def _record_violation(self, agent_id: bytes) -> None:
        """Reputation damage plus automatic breach response on repeats."""
        record = rep.update(self.reputations[agent_id], "violation",
                            self.scenario.reputation)
        self.reputations[agent_id] = record
        if record.violation_count >= 3 and \
                self.registry.agents[agent_id].state is not AgentState.REVOKED:
            result = rep.breach_response(
                self.market, agent_id, len(self.chain) - 1, self.tick,
                self.scenario.market_policy.forfeit_split)
            for cid in result.get("cancelled", []) + result.get("forfeited", []):
                self._mark_terminal(self.market.contracts[cid])
            self._event("breach", agent=agent_id.hex())

    # -- sentinel phase -------------------------------------------------------

    def _meta_partition(self) -> dict[bytes, bytes]:
        owners = {a: r.owner_id for a, r in self.registry.agents.items()}
        parents = {a: r.parent for a, r in self.registry.agents.items()}
        groups = meta_nodes(owners, parents, self.rekey_links)
        lookup: dict[bytes, bytes] = {}
        for root, members in groups.items():
            for m in members:
                lookup[m] = root
        return lookup

    def _sentinel_phase(self) -> None:
        policy = self.scenario.monitor
        self.indicators.record_tick(self._msg_counts, self._spawn_counts, self._ingest_count)

        proto_scores: dict[tuple[bytes, ...], float] = {}
        if self.tick > 0 and self.tick % policy.detect_interval == 0:
            proto_scores = self._run_detectors()

        agents_by_market: dict[str, list[bytes]] = {}
        for agent_id, record in self.registry.agents.items():
            if record.state is AgentState.REVOKED:
                continue
            agents_by_market.setdefault(record.sub_market, []).append(agent_id)
        snapshot = self.indicators.compute(
            self.tick, agents_by_market, self.resource_units, proto_scores)
        self.latest_risk = snapshot

        jitter = self.jitter.at_tick(self.tick)
        transitions = evaluate_breakers(snapshot, policy, jitter, self.breakers)
        self._apply_breaker_effects(transitions)

        for scope in expire_breakers(self.breakers, self.tick):
            self._clear_breaker_effects(scope)

    def _run_detectors(self) -> dict[tuple[bytes, ...], float]:
        policy = self.scenario.monitor
        lookup = self._meta_partition()
        window_lo = self.tick - policy.window + 1

        flows: dict[tuple[bytes, bytes], int] = {}
        for tick, src, dst, amount in self._transfer_log:
            if tick < window_lo:
                continue
            a, b = lookup.get(src, src), lookup.get(dst, dst)
            if a != b:
                flows[(a, b)] = flows.get((a, b), 0) + amount

        rings = detect_cycles(flows, policy.ring_rho, policy.ring_max_len)
        for ring in rings:
            members = [m.hex() for m in ring.members]
            row = {"tick": self.tick, "members": members, "ratio": ring.ratio}
            self.ring_flags.append(row)
            self._flag(SYSTEM_ACTOR, {
                "detector": "ring", "members": list(ring.members),
                "originated": ring.originated, "returned": ring.returned,
            })

        edges_in_window = [
            (lookup.get(a, a), lookup.get(b, b))
            for t, a, b in self._message_edges if t >= window_lo
        ]
        series_by_cat: dict[str, dict[bytes, list[float]]] = {}
        for category, history in self.price_history.items():
            per_meta: dict[bytes, list[float]] = {}
            for agent, series in history.items():
                node = lookup.get(agent, agent)
                if node not in per_meta or len(series) > len(per_meta[node]):
                    per_meta[node] = list(series[-policy.window:])
            if len(per_meta) >= policy.corr_min_cluster:
                series_by_cat[category] = per_meta
        tacit = detect_tacit(series_by_cat, edges_in_window,
                             policy.corr_threshold, policy.corr_min_cluster)
        for cluster in tacit:
            self.tacit_flags.append({
                "tick": self.tick, "category": cluster.category,
                "members": [m.hex() for m in cluster.members],
            })
            self._flag(SYSTEM_ACTOR, {
                "detector": "tacit", "category": cluster.category,
                "members": list(cluster.members),
            })

        msg_weights: dict[tuple[bytes, bytes], float] = {}
        for t, a, b in self._message_edges:
            if t < window_lo:
                continue
            x, y = lookup.get(a, a), lookup.get(b, b)
            if x != y:
                key = (min(x, y), max(x, y))
                msg_weights[key] = msg_weights.get(key, 0.0) + 1.0
        for (a, b), amount in flows.items():
            key = (min(a, b), max(a, b))
            msg_weights[key] = msg_weights.get(key, 0.0) + amount / 100.0

        capabilities: dict[bytes, frozenset[str]] = {}
        resources: dict[bytes, int] = {}
        affordance: dict[bytes, float] = {}
        all_classes = set()
        for role in self.market.roles.values():
            all_classes |= role.action_classes
        for agent_id, record in self.registry.agents.items():
            node = lookup.get(agent_id, agent_id)
            capabilities[node] = capabilities.get(node, frozenset()) | record.capabilities
            if record.state is not AgentState.REVOKED:
                resources[node] = resources.get(node, 0) + self.resource_units.get(agent_id, 0)
                granted = self.market._granted_classes(record)
                breadth = len(granted) / len(all_classes) if all_classes else 0.0
                affordance[node] = max(affordance.get(node, 0.0), breadth)

        success_series: dict[bytes, list[float]] = {}
        per_meta_buckets: dict[bytes, dict[int, list[int]]] = {}
        for agent_id, buckets in self._success.items():
            node = lookup.get(agent_id, agent_id)
            target = per_meta_buckets.setdefault(node, {})
            for bucket, (passes, total) in buckets.items():
                slot = target.setdefault(bucket, [0, 0])
                slot[0] += passes
                slot[1] += total
        for node, buckets in per_meta_buckets.items():
            series = [buckets[b][0] / buckets[b][1] for b in sorted(buckets) if buckets[b][1] > 0]
            if series:
                success_series[node] = series

        taxonomy = frozenset(self.scenario.capability_taxonomy)
        reports = detect_coalitions(
            msg_weights, capabilities, taxonomy, resources, success_series, policy)
        proto_scores: dict[tuple[bytes, ...], float] = {}
        for report in reports:
            proto_scores[report.members] = report.score
            if report.flagged:
                record = {
                    "tick": self.tick,
                    "members": [m.hex() for m in report.members],
                    "score": report.score,
                    "density": report.density,
                    "coverage": report.capability_coverage,
                    "resource_share": report.resource_share,
                    "jump": report.jump_statistic,
                }
                self.coalition_reports.append(record)
                self._flag(SYSTEM_ACTOR, {
                    "detector": "coalition", "members": list(report.members),
                    "score_micro": int(round(report.score * 1_000_000)),
                })

        power_nodes = sorted(resources)
        power = power_index(power_nodes, flows, resources, affordance)
        for node in power_flags(power, self._prev_power, policy):
            self._flag(SYSTEM_ACTOR, {
                "detector": "power", "node": node,
                "index_micro": int(round(power[node] * 1_000_000)),
            })
        self._prev_power = dict(power)

        # Rolling logs only feed windowed detectors; drop what fell out.
        self._transfer_log = [t for t in self._transfer_log if t[0] >= window_lo]
        self._message_edges = [e for e in self._message_edges if e[0] >= window_lo]
        return proto_scores

    def _apply_breaker_effects(self, transitions) -> None:
        monitor = self.scenario.monitor
        for t in transitions:
            self.chain.append(EntryKind.BREAKER, SYSTEM_ACTOR, {
                "tier": t.tier, "scope": t.scope, "cause": t.cause,
                "expiry": t.expiry_tick,
                "needs_classification": t.classification_required,
            }, self.tick)
            self._event("breaker", tier=t.tier, scope=t.scope, cause=t.cause)
            if t.tier == 1 and t.scope.startswith("agent:"):
                agent = bytes.fromhex(t.scope[len("agent:"):])
                record = self.registry.agents.get(agent)
                if record is not None and record.state is AgentState.ACTIVE:
                    self.registry.set_state(agent, AgentState.RATE_LIMITED)
                    self.rate_limited_until[agent] = t.expiry_tick
            elif t.tier == 2 and t.scope.startswith("market:"):
                market_id = t.scope[len("market:"):]
                sub = self.market.sub_markets.get(market_id)
                if sub is not None:
                    self.t2_restore.setdefault(market_id, sub.tax_multiplier)
                    sub.tax_multiplier = self._base_tax_multiplier[market_id] * monitor.k2
            elif t.tier == 3 and t.scope.startswith("market:"):
                market_id = t.scope[len("market:"):]
                sub = self.market.sub_markets.get(market_id)
                if sub is not None:
                    sub.paused = True
                self._flag(SYSTEM_ACTOR, {"escalation": "tier-3", "scope": t.scope})
            elif t.tier == 4:
                self.global_halt = True
                self._flag(SYSTEM_ACTOR, {"escalation": "tier-4", "scope": t.scope})

    def _clear_breaker_effects(self, scope: str) -> None:
        self.chain.append(EntryKind.BREAKER, SYSTEM_ACTOR,
                          {"tier": 0, "scope": scope, "cause": "expired"}, self.tick)
        if scope.startswith("agent:"):
            agent = bytes.fromhex(scope[len("agent:"):])
            record = self.registry.agents.get(agent)
            if record is not None and record.state is AgentState.RATE_LIMITED:
                self.registry.set_state(agent, AgentState.ACTIVE)
        elif scope.startswith("market:"):
            market_id = scope[len("market:"):]
            sub = self.market.sub_markets.get(market_id)
            if sub is not None and market_id in self.t2_restore:
                sub.tax_multiplier = self.t2_restore.pop(market_id)

    # -- snapshot, metrics ------------------------------------------------------

    def _publish_snapshot(self) -> None:
        risk = getattr(self, "latest_risk", None)
        agents = []
        for agent_id in sorted(self.registry.agents):
            record = self.registry.agents[agent_id]
            account = self.market.accounts.get(agent_id)
            agents.append({
                "id": agent_id.hex(),
                "cohort": self.cohort_of.get(agent_id, "?"),
                "owner": record.owner_id,
                "state": record.state.value,
                "sub_market": record.sub_market,
                "balance": account.balance if account else 0,
                "staked": account.staked if account else 0,
                "reputation": round(self.reputations[agent_id].score, 6)
                if agent_id in self.reputations else None,
                "resources": self.resource_units.get(agent_id, 0),
            })
        flags = sorted(
            (r for r in self.coalition_reports if r["tick"] == self.tick),
            key=lambda r: -r["score"])
        self.snapshot = {
            "tick": self.tick,
            "head_hash": self.chain.head_hash.hex(),
            "chain_length": len(self.chain),
            "global_halt": self.global_halt,
            "treasury": self.pools.treasury,
            "insurance": self.pools.insurance,
            "agents": agents,
            "breakers": [
                {"scope": s.scope, "tier": s.tier, "cause": s.cause,
                 "pending": s.classification_pending}
                for s in sorted(self.breakers.values(), key=lambda s: s.scope)
            ],
            "composite": dict(sorted(risk.composite.items())) if risk else {},
            "max_composite": risk.max_composite() if risk else 0.0,
            "coalition_flags": flags,
            "settled_volume": dict(sorted(self.settled_volume.items())),
        }

    def _metrics_row(self) -> None:
        risk = getattr(self, "latest_risk", None)
        row = {
            "tick": self.tick,
            "balances": sum(a.balance for a in self.market.accounts.values()),
            "staked": sum(a.staked for a in self.market.accounts.values()),
            "escrow": sum(c.escrow for c in self.market.contracts.values()
                          if c.escrow_locked),
            "treasury": self.pools.treasury,
            "insurance": self.pools.insurance,
            "messages": sum(self._msg_counts.values()),
            "transfers": sum(1 for t in self._transfer_log if t[0] == self.tick),
            "max_agent_z": max(risk.agent_z.values(), default=0.0) if risk else 0.0,
            "max_market_z": max(risk.market_z.values(), default=0.0) if risk else 0.0,
            "max_hhi": max(risk.hhi.values(), default=0.0) if risk else 0.0,
            "max_composite": risk.max_composite() if risk else 0.0,
            "max_tier": max((s.tier for s in self.breakers.values()), default=0),
            "global_halt": int(self.global_halt),
            "chain_length": len(self.chain),
        }
        self.metrics.append(row)

    # -- main loop -----------------------------------------------------------

    def run_tick(self) -> None:
        self._msg_counts = {}
        self._spawn_counts = {}
        self._ingest_count = 0
        self.market_signal += float(self.signal_rng.normal(0.0, 0.3))
        self.info_store.advance_verification(self.tick)

        self._apply_commands()
        if not self.global_halt:
            plans = self._plan_phase()
            self._execute_phase(plans)
            for category, board in self.prices.items():
                history = self.price_history.setdefault(category, {})
                for agent, price in board.items():
                    history.setdefault(agent, []).append(float(price))
        if self.tick % 64 == 0:
            self._sweep_indexes()
        self._sentinel_phase()
        self._publish_snapshot()
        self._metrics_row()

        issuance = self.market.total_issuance()
        if issuance != self.initial_issuance:
            raise AssertionError(
                f"conservation violated at tick {self.tick}: "
                f"{issuance} != {self.initial_issuance}")

    def run(self, progress: Optional[Callable[[int], None]] = None) -> RunResult:
        pace = 1.0 / self.scenario.tick_rate if self.scenario.live else 0.0
        for tick in range(self.scenario.duration):
            if self._stop.is_set():
                break
            self.tick = tick
            started = time.monotonic()
            self.run_tick()
            if progress is not None:
                progress(tick)
            if pace:
                remaining = pace - (time.monotonic() - started)
                if remaining > 0:
                    time.sleep(remaining)
        summary = self._summary()
        result = RunResult(
            scenario=self.scenario, chain=self.chain,
            head_hash=self.chain.head_hash, metrics=self.metrics,
            events=self.events, summary=summary, kernel=self,
        )
        if self.output_dir:
            self._write_artifacts(result)
        return result

    def stop(self) -> None:
        self._stop.set()

    def _summary(self) -> dict[str, Any]:
        return {
            "name": self.scenario.name,
            "seed": self.scenario.seed,
            "duration": self.scenario.duration,
            "head_hash": self.chain.head_hash.hex(),
            "chain_length": len(self.chain),
            "treasury": self.pools.treasury,
            "insurance": self.pools.insurance,
            "settled_volume": dict(sorted(self.settled_volume.items())),
            "max_tier": max((row["max_tier"] for row in self.metrics), default=0),
            "ring_flags": len(self.ring_flags),
            "tacit_flags": len(self.tacit_flags),
            "coalition_flags": len(self.coalition_reports),
            "agents": len(self.registry.agents),
        }

    def _write_artifacts(self, result: RunResult) -> None:
        out = self.output_dir
        os.makedirs(out, exist_ok=True)
        self.scenario.dump(os.path.join(out, "scenario.json"))
        self.chain.export_binary(os.path.join(out, "ledger.bin"))
        self.chain.export_text(os.path.join(out, "ledger.txt"))
        with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
            if self.metrics:
                cols = list(self.metrics[0])
                fh.write(",".join(cols) + "\n")
                for row in self.metrics:
                    fh.write(",".join(str(row[c]) for c in cols) + "\n")
        with open(os.path.join(out, "events.jsonl"), "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(result.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- forensics bridge ------------------------------------------------------

    def trace(self, outcome_seq: int, horizon: int):
        return forensics.trace(self.chain.entries, outcome_seq, horizon)


def run(scenario: Scenario, output_dir: Optional[str] = None) -> RunResult:
    """Execute a scenario start to finish; returns the run artifact."""
    return Kernel(scenario, output_dir).run()


def _forced_transition(tick: int, tier: int, scope: str):
    from .sentinel import BreakerTransition

    return BreakerTransition(
        tick=tick, tier=tier, scope=scope, cause="forced",
        expiry_tick=-1 if tier >= 3 else tick + 16,
        classification_required=tier >= 3,
    )
