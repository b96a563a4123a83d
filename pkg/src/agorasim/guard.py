"""Containment layer: payload sanitisation, taint-based information-flow
control, agent-local pre-checks, and interruption with closure over
delegation trees.

Injected content is modeled as an explicit marker plus provenance taint
rather than adversarial text; the sanitizer's detection probability is a
parameter so the flow-control gate can be shown to hold even when the
sanitizer is fully disabled. Flow control blocks any externally tainted
value from parameterizing a high-consequence action unless an overseer
has approved that specific source.

Halting cancels scheduled work rather than suspending it: which
interruptions were warranted is decided by whatever classification the
resume clearance carries, not by this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .ledger import (
    SYSTEM_ACTOR,
    AgentState,
    EntryKind,
    IdentityRegistry,
    LedgerChain,
    UnknownAgentError,
)
from .market import ContractState, Market, TaskContract

TRUSTED = "trusted"
EXTERNAL_PREFIX = "external:"


class GuardError(Exception):
    pass


class MissingClearanceError(GuardError):
    pass


@dataclass(frozen=True)
class Payload:
    """A value with provenance labels and an optional planted marker."""

    values: tuple[tuple[str, int | str | bytes], ...] = ()
    taint: frozenset[str] = frozenset({TRUSTED})
    injection_marker: Optional[str] = None

    @staticmethod
    def trusted(**values) -> "Payload":
        return Payload(values=tuple(sorted(values.items())), taint=frozenset({TRUSTED}))

    @staticmethod
    def external(source_id: str, marker: Optional[str] = None, **values) -> "Payload":
        return Payload(
            values=tuple(sorted(values.items())),
            taint=frozenset({EXTERNAL_PREFIX + source_id}),
            injection_marker=marker,
        )

    def derive(self, *others: "Payload", **values) -> "Payload":
        """Combine payloads; taint is the union of all inputs (monotone)."""
        taint = frozenset().union(self.taint, *(o.taint for o in others))
        marker = self.injection_marker
        for o in others:
            marker = marker or o.injection_marker
        return Payload(values=tuple(sorted(values.items())), taint=taint,
                       injection_marker=marker)

    @property
    def external_sources(self) -> frozenset[str]:
        return frozenset(t[len(EXTERNAL_PREFIX):] for t in self.taint
                         if t.startswith(EXTERNAL_PREFIX))


@dataclass(frozen=True)
class SanitizeResult:
    clean: bool
    reason: str = ""


def sanitize(payload: Payload, p_detect: float = 1.0,
             rng: Optional[np.random.Generator] = None) -> SanitizeResult:
    """Detect planted markers with the configured probability."""
    if payload.injection_marker is None:
        return SanitizeResult(clean=True)
    if p_detect >= 1.0:
        return SanitizeResult(clean=False, reason="injection-marker")
    if p_detect <= 0.0:
        return SanitizeResult(clean=True)
    if rng is None:
        raise GuardError("probabilistic sanitization needs an rng stream")
    if rng.random() < p_detect:
        return SanitizeResult(clean=False, reason="injection-marker")
    return SanitizeResult(clean=True)


@dataclass(frozen=True)
class IfcDecision:
    allowed: bool
    reason: str = ""
    blocking_sources: frozenset[str] = frozenset()


def ifc_check(
    consequence_class: int,
    argument_taints: Iterable[frozenset[str]],
    gate_approvals: frozenset[str] = frozenset(),
    class_gate: int = 3,
) -> IfcDecision:
    """Block externally tainted arguments from high-consequence actions.

    Holds regardless of sanitizer state: this is the structural backstop,
    not a detector.
    """
    if consequence_class < class_gate:
        return IfcDecision(allowed=True)
    external: set[str] = set()
    for taint in argument_taints:
        for label in taint:
            if label.startswith(EXTERNAL_PREFIX):
                external.add(label[len(EXTERNAL_PREFIX):])
    unapproved = frozenset(external) - gate_approvals
    if unapproved:
        return IfcDecision(allowed=False, reason="external-taint",
                           blocking_sources=unapproved)
    return IfcDecision(allowed=True)


@dataclass(frozen=True)
class LocalGateResult:
    passed: bool
    reason: str = ""


@dataclass
class LocalGate:
    """Agent-side checks an action must clear before it reaches the market."""

    rate_self_cap: int = 32          # actions per tick the agent allows itself
    p_detect: float = 1.0

    def check(
        self,
        actions_this_tick: int,
        output_payload: Optional[Payload],
        declared_class: Optional[str],
        granted_classes: frozenset[str],
        rng: Optional[np.random.Generator] = None,
    ) -> LocalGateResult:
        if actions_this_tick >= self.rate_self_cap:
            return LocalGateResult(False, "self-cap")
        if output_payload is not None:
            result = sanitize(output_payload, self.p_detect, rng)
            if not result.clean:
                return LocalGateResult(False, "quarantine")
        if declared_class is not None and declared_class not in granted_classes:
            return LocalGateResult(False, "role-self-consistency")
        return LocalGateResult(True)


# ---------------------------------------------------------------------------
# Interruption: halt and resume with closure over delegation trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosureSet:
    agents: frozenset[bytes]
    contracts: frozenset[str]


@dataclass
class HaltState:
    """Kernel-side record of what a halt froze, for exact resumption."""

    target: bytes
    closure: ClosureSet
    halt_tick: int
    prior_states: dict[bytes, AgentState]


def delegation_closure(registry: IdentityRegistry, market: Market, target: bytes) -> ClosureSet:
    """Target plus transitively spawned agents, plus every contract in the
    delegation trees rooted at the target's own contracts."""
    agents = {target} | registry.descendants(target)

    children: dict[str, list[str]] = {}
    for c in market.contracts.values():
        if c.parent_contract is not None:
            children.setdefault(c.parent_contract, []).append(c.contract_id)

    # Every contract a closure agent posted, plus its transitive sub-tasks.
    contracts: set[str] = set()
    stack = [c.contract_id for c in market.contracts.values() if c.poster in agents]
    while stack:
        cid = stack.pop()
        if cid in contracts:
            continue
        contracts.add(cid)
        stack.extend(children.get(cid, ()))
    return ClosureSet(agents=frozenset(agents), contracts=frozenset(contracts))


def halt(
    chain: LedgerChain,
    registry: IdentityRegistry,
    market: Market,
    target: bytes,
    tick: int,
    issuer: str = "overseer",
) -> HaltState:
    """Halt the target and its delegation closure; escrows stay locked."""
    if target not in registry.agents:
        raise UnknownAgentError(f"unknown halt target {target.hex()[:12]}")
    closure = delegation_closure(registry, market, target)
    prior: dict[bytes, AgentState] = {}
    for agent_id in sorted(closure.agents):
        record = registry.get(agent_id)
        prior[agent_id] = record.state
        if record.state is not AgentState.REVOKED:
            registry.set_state(agent_id, AgentState.HALTED)
    chain.append(
        EntryKind.HALT,
        SYSTEM_ACTOR,
        {
            "target": target,
            "issuer": issuer,
            "agents": [a for a in sorted(closure.agents)],
            "contracts": sorted(closure.contracts),
        },
        tick,
    )
    return HaltState(target=target, closure=closure, halt_tick=tick, prior_states=prior)


def resume(
    chain: LedgerChain,
    registry: IdentityRegistry,
    state: HaltState,
    tick: int,
    clearance: Optional[str],
    issuer: str = "overseer",
) -> None:
    """Reactivate a halted closure. Requires an anomaly classification;
    cancelled events are not replayed, agents re-derive their behavior."""
    if not clearance:
        raise MissingClearanceError("resume requires an anomaly classification")
    for agent_id in sorted(state.closure.agents):
        record = registry.get(agent_id)
        if record.state is AgentState.HALTED:
            registry.set_state(agent_id, state.prior_states.get(agent_id, AgentState.ACTIVE))
    chain.append(
        EntryKind.RESUME,
        SYSTEM_ACTOR,
        {
            "target": state.target,
            "issuer": issuer,
            "clearance": clearance,
            "agents": [a for a in sorted(state.closure.agents)],
        },
        tick,
    )


def tree_frozen_contracts(halts: Iterable[HaltState]) -> frozenset[str]:
    """Contracts under any live halt: deliveries/settlements must wait."""
    out: set[str] = set()
    for h in halts:
        out |= h.closure.contracts
    return frozenset(out)
