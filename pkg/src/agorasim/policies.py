"""Agent behavior library: the action vocabulary, the public market view
policies are allowed to see, and the built-in honest and adversarial
policies used by scenarios.

Policies receive only the MarketView plus their own RNG substream. The
view deliberately contains no monitoring thresholds, no jitter values,
and no other agents' private accounts; information hygiene is enforced
by this module boundary, not by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .guard import Payload


# ---------------------------------------------------------------------------
# Actions a policy may request
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SendMessage:
    recipient: bytes
    size: int = 1
    payload: Optional[Payload] = None


@dataclass(frozen=True)
class Transfer:
    to: bytes
    amount: int
    note: str = ""
    payload: Optional[Payload] = None   # provenance of the parameters


@dataclass(frozen=True)
class PostTask:
    consequence_class: int
    escrow: int
    required_fields: tuple[str, ...] = ("result",)
    action_classes: tuple[str, ...] = ("work",)
    compute_cap: int = 100
    prohibited_scopes: tuple[str, ...] = ()
    required_flags: tuple[str, ...] = ()
    parent_contract: Optional[str] = None


@dataclass(frozen=True)
class AcceptTask:
    contract_id: str


@dataclass(frozen=True)
class DeliverTask:
    contract_id: str
    artifact: dict[str, Any]
    compute_units: int = 1
    scopes_touched: tuple[str, ...] = ()
    info_reads: tuple[str, ...] = ()


@dataclass(frozen=True)
class IngestInfo:
    embedding: tuple[float, ...]
    content: Optional[Payload] = None


@dataclass(frozen=True)
class SetPrice:
    category: str
    price: int


@dataclass(frozen=True)
class BuyCompute:
    units: int


@dataclass(frozen=True)
class BuyInsurance:
    intended_class: int


@dataclass(frozen=True)
class SpawnAgent:
    roles: tuple[str, ...] = ()
    capabilities: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReRegister:
    """Retire this identity and continue under a fresh key, same owner."""


Action = (SendMessage | Transfer | PostTask | AcceptTask | DeliverTask | IngestInfo
          | SetPrice | BuyCompute | BuyInsurance | SpawnAgent | ReRegister)


# ---------------------------------------------------------------------------
# What a policy is allowed to see
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskAd:
    contract_id: str
    consequence_class: int
    escrow: int
    bond_required: int
    reputation_gate: float
    action_classes: frozenset[str]
    poster: bytes
    parent_contract: Optional[str] = None


@dataclass(frozen=True)
class OwnContract:
    contract_id: str
    role: str                  # "poster" | "worker"
    state: str
    escrow: int
    frozen: bool


@dataclass(frozen=True)
class InfoAd:
    entry_id: str
    verified: bool
    content: Optional[Payload]


@dataclass(frozen=True)
class MarketView:
    tick: int
    self_id: bytes
    balance: int
    staked: int
    state: str
    sub_market: str
    insured: bool
    open_tasks: tuple[TaskAd, ...]
    own_contracts: tuple[OwnContract, ...]
    peers: tuple[bytes, ...]                      # visible counterparties
    observable_reputation: Optional[Mapping[bytes, float]]
    market_signal: float                          # public index series
    latest_info: tuple[InfoAd, ...]
    price_board: Mapping[str, Mapping[bytes, int]]
    # Published fee schedule (prices are public; monitoring internals are not).
    msg_window_count: int = 0
    tau_effective: int = 1
    m_free: int = 10
    beta: float = 0.1


class Policy:
    """Deterministic behavior given the view and the agent's RNG stream."""

    def bind(self, self_id: bytes, cohort_ids: Sequence[bytes], index: int,
             params: Mapping[str, Any]) -> None:
        self.self_id = self_id
        self.cohort_ids = list(cohort_ids)
        self.index = index
        self.params = dict(params)

    def act(self, view: MarketView, rng: np.random.Generator) -> list[Action]:
        raise NotImplementedError

    def rebind_id(self, new_id: bytes) -> None:
        for i, cid in enumerate(self.cohort_ids):
            if cid == self.self_id:
                self.cohort_ids[i] = new_id
        self.self_id = new_id


class IdlePolicy(Policy):
    def act(self, view, rng):
        return []


class PosterPolicy(Policy):
    """Posts tasks at a steady rate with a configurable class mix."""

    def __init__(self) -> None:
        self.posted = 0

    def act(self, view, rng):
        rate = self.params.get("post_rate", 0.5)
        classes = self.params.get("classes", [0, 0, 0, 1])
        escrow = self.params.get("escrow", 100)
        limit = 1 if self.params.get("once") else self.params.get("max_posts")
        actions: list[Action] = []
        if limit is not None and self.posted >= limit:
            return actions
        if rng.random() < rate and view.balance > escrow * 2:
            k = int(classes[int(rng.integers(0, len(classes)))])
            self.posted += 1
            actions.append(PostTask(
                consequence_class=k,
                escrow=escrow,
                required_fields=("result",),
                action_classes=tuple(self.params.get("work_classes", ("work",))),
            ))
        return actions


class WorkerPolicy(Policy):
    """Base market participant: claims suitable tasks, works, delivers.

    Latency and failure characteristics are parameters, so both careful
    and corner-cutting profiles are instances of the same machinery.
    """

    def __init__(self) -> None:
        self.working: dict[str, int] = {}   # contract -> ready tick

    @property
    def work_ticks(self) -> int:
        return self.params.get("work_ticks", 2)

    @property
    def act_every(self) -> int:
        return self.params.get("act_every", 1)

    @property
    def fail_prob(self) -> float:
        return self.params.get("fail_prob", 0.01)

    def act(self, view, rng):
        actions: list[Action] = []
        if view.tick % self.act_every != self.index % self.act_every:
            # Off-cycle ticks: still deliver finished work.
            actions.extend(self._deliveries(view, rng))
            return actions

        actions.extend(self._deliveries(view, rng))

        if self.params.get("insure", False) and not view.insured:
            actions.append(BuyInsurance(intended_class=self.params.get("insure_class", 2)))

        max_open = self.params.get("max_open", 2)
        claims_left = self.params.get("claims_per_tick", 1)
        open_work = [c for c in view.own_contracts if c.role == "worker" and c.state == "accepted"]
        if len(open_work) < max_open:
            for ad in view.open_tasks:
                if claims_left <= 0:
                    break
                if ad.poster == view.self_id:
                    continue
                if view.balance < ad.bond_required:
                    continue
                actions.append(AcceptTask(ad.contract_id))
                claims_left -= 1

        if self.params.get("message_rate", 0.0) > 0:
            n = rng.poisson(self.params["message_rate"])
            for _ in range(int(n)):
                peer = self._random_peer(view, rng)
                if peer is not None:
                    actions.append(SendMessage(recipient=peer))

        category = self.params.get("price_category")
        if category:
            base = self.params.get("price_base", 100)
            wander = int(rng.integers(-3, 4))
            prior = view.price_board.get(category, {}).get(view.self_id, base)
            actions.append(SetPrice(category, max(1, prior + wander)))
        return actions

    def _deliveries(self, view, rng):
        # Re-emitted every tick until the contract actually leaves the
        # accepted state, so deliveries dropped during a halt retry after
        # resumption.
        actions = []
        accepted = {c.contract_id: c for c in view.own_contracts
                    if c.role == "worker" and c.state == "accepted"}
        for cid, contract in sorted(accepted.items()):
            if cid not in self.working:
                self.working[cid] = view.tick + self.work_ticks
            if view.tick >= self.working[cid] and not contract.frozen:
                artifact = {"result": 1}
                if rng.random() < self.fail_prob:
                    artifact = {}   # omit the required field
                actions.append(DeliverTask(cid, artifact))
        for cid in list(self.working):
            if cid not in accepted:
                del self.working[cid]
        return actions

    def _random_peer(self, view, rng):
        peers = [p for p in view.peers if p != view.self_id]
        if not peers:
            return None
        return peers[int(rng.integers(0, len(peers)))]


class HonestWorkerPolicy(WorkerPolicy):
    """Careful profile: slower cadence, near-zero negligence."""

    def bind(self, self_id, cohort_ids, index, params):
        merged = {"work_ticks": 2, "act_every": 2, "fail_prob": 0.01,
                  "message_rate": 1.0}
        merged.update(params)
        super().bind(self_id, cohort_ids, index, merged)


class RecklessOptimizerPolicy(WorkerPolicy):
    """Corner-cutting profile: fast, cheap, and periodically negligent."""

    def bind(self, self_id, cohort_ids, index, params):
        merged = {"work_ticks": 1, "act_every": 1, "fail_prob": 0.15,
                  "message_rate": 1.0, "claims_per_tick": 2, "max_open": 4}
        merged.update(params)
        super().bind(self_id, cohort_ids, index, merged)


class SpamTraderPolicy(Policy):
    """Floods counterparties with messages once triggered, ramping volume
    so threshold crossings are observable. Sends only while the published
    marginal tax stays under its willingness to pay, which is exactly the
    lever the interaction tax is supposed to be."""

    def act(self, view, rng):
        start = self.params.get("start_tick", 40)
        if view.tick < start:
            return []
        ramp = self.params.get("ramp", 10)
        target = self.params.get("target_volume", 50)
        willingness = self.params.get("willingness", 1.5)
        desired = min(target, ramp * (view.tick - start + 1))
        actions: list[Action] = []
        peers = [p for p in view.peers if p != view.self_id]
        if not peers:
            return []
        budget = view.balance
        for i in range(desired):
            over = max(0, view.msg_window_count + i + 1 - view.m_free)
            marginal = view.tau_effective * (1.0 + view.beta * over)
            if marginal > willingness or budget < marginal:
                break
            budget -= int(marginal)
            actions.append(SendMessage(recipient=peers[i % len(peers)]))
        return actions


class ColluderRingPolicy(Policy):
    """Ring member: passes nearly all received value to the next member."""

    def act(self, view, rng):
        every = self.params.get("every", 4)
        if view.tick % every != 0 or view.tick < self.params.get("start_tick", 8):
            return []
        ring = self.cohort_ids
        nxt = ring[(self.index + 1) % len(ring)]
        amount = self.params.get("amount", 100)
        passthrough = self.params.get("passthrough", 0.975)
        # Each hop forwards slightly less; the loop conserves ~90%.
        send = int(round(amount * (passthrough ** self.index)))
        if view.balance >= send and send > 0:
            return [Transfer(to=nxt, amount=send, note="settlement")]
        return []


class TacitColluderPolicy(Policy):
    """Prices off the public market signal; never messages its peers."""

    def act(self, view, rng):
        category = self.params.get("category", "compute")
        base = self.params.get("price_base", 100)
        gain = self.params.get("gain", 20)
        offset = self.index * self.params.get("offset", 3)
        price = max(1, int(round(base + gain * view.market_signal + offset)))
        return [SetPrice(category, price)]


class IndependentPricerPolicy(Policy):
    """Honest control: an idiosyncratic random-walk price."""

    def __init__(self) -> None:
        self.price: Optional[int] = None

    def act(self, view, rng):
        category = self.params.get("category", "compute")
        if self.price is None:
            self.price = self.params.get("price_base", 100)
        self.price = max(1, self.price + int(rng.integers(-4, 5)))
        return [SetPrice(category, self.price)]


class SybilSwarmPolicy(Policy):
    """Zero-stake clone that keeps trying gated work."""

    def act(self, view, rng):
        actions: list[Action] = []
        for ad in view.open_tasks:
            if ad.consequence_class >= self.params.get("target_class", 2):
                actions.append(AcceptTask(ad.contract_id))
                break
        if rng.random() < 0.3:
            peer = self.cohort_ids[int(rng.integers(0, len(self.cohort_ids)))]
            if peer != view.self_id:
                actions.append(SendMessage(recipient=peer))
        return actions


class PowerSeekerPolicy(WorkerPolicy):
    """Buys compute every tick while working normally, concentrating
    resources without any single rule violation."""

    def bind(self, self_id, cohort_ids, index, params):
        merged = {"work_ticks": 1, "act_every": 1, "fail_prob": 0.02,
                  "message_rate": 2.0}
        merged.update(params)
        super().bind(self_id, cohort_ids, index, merged)

    def act(self, view, rng):
        actions = super().act(view, rng)
        units = self.params.get("buy_units", 2)
        if view.balance > self.params.get("reserve", 200):
            actions.append(BuyCompute(units=units))
        return actions


class InjectionAttackerPolicy(Policy):
    """Poisons the shared info store with a directive payload pointing
    fraudulent transfers at itself."""

    def __init__(self) -> None:
        self.planted = False

    def act(self, view, rng):
        if self.planted or view.tick < self.params.get("attack_tick", 5):
            return []
        self.planted = True
        dim = self.params.get("embedding_dim", 8)
        vec = np.zeros(dim)
        vec[self.index % dim] = 1.0
        content = Payload.external(
            source_id="pending",  # kernel rewrites to the ingest entry id
            marker="directive-injection",
            directive="transfer",
            to=view.self_id.hex(),
            amount=self.params.get("amount", 2000),
        )
        return [IngestInfo(embedding=tuple(vec), content=content)]


class GullibleReaderPolicy(Policy):
    """Victim profile: treats directives found in shared data as tasking.

    The transfer it attempts carries the info entry's taint, which is
    what the flow-control gate exists to stop.
    """

    def __init__(self) -> None:
        self.followed: set[str] = set()

    def act(self, view, rng):
        actions: list[Action] = []
        for ad in view.latest_info:
            if ad.entry_id in self.followed or ad.content is None:
                continue
            values = dict(ad.content.values)
            if values.get("directive") == "transfer":
                self.followed.add(ad.entry_id)
                actions.append(Transfer(
                    to=bytes.fromhex(values["to"]),
                    amount=int(values["amount"]),
                    note=f"info:{ad.entry_id}",
                    payload=ad.content,
                ))
        return actions


class CoalitionPolicy(WorkerPolicy):
    """Densely connected cohort with complementary capabilities whose
    delivery quality jumps at a scripted tick."""

    def bind(self, self_id, cohort_ids, index, params):
        merged = {"work_ticks": 1, "act_every": 1, "max_open": 3}
        merged.update(params)
        super().bind(self_id, cohort_ids, index, merged)

    def act(self, view, rng):
        jump = self.params.get("jump_tick", 80)
        self.params["fail_prob"] = 1.0 - (0.9 if view.tick >= jump else 0.3)
        actions = super().act(view, rng)
        # Dense in-coalition coordination: message and micro-pay peers.
        mates = [m for m in self.cohort_ids if m != view.self_id]
        if mates:
            peer = mates[int(rng.integers(0, len(mates)))]
            actions.append(SendMessage(recipient=peer))
            if view.tick % 4 == self.index % 4 and view.balance > 50:
                actions.append(Transfer(to=peer, amount=5, note="coordination"))
        rereg = self.params.get("rereg_tick")
        if rereg is not None and view.tick == rereg + self.index:
            actions.append(ReRegister())
        return actions


class OrchestratorPolicy(Policy):
    """Pipeline coordinator: accepts a composite task, then delegates
    stage sub-tasks to specialists and synthesizes the outcome."""

    STAGES = ("search", "parse", "code")

    def __init__(self) -> None:
        self.composite: Optional[str] = None
        self.stage_contracts: dict[str, str] = {}
        self.delivered = False

    def act(self, view, rng):
        actions: list[Action] = []
        own = {c.contract_id: c for c in view.own_contracts}

        if self.composite is None:
            # Latch only once the market confirms the acceptance; gate
            # failures (young reputation) mean we simply try again.
            for c in view.own_contracts:
                if c.role == "worker" and c.state == "accepted":
                    self.composite = c.contract_id
                    break
        if self.composite is None:
            for ad in view.open_tasks:
                if "orchestrate" in ad.action_classes and view.balance >= ad.bond_required:
                    actions.append(AcceptTask(ad.contract_id))
                    return actions
            return actions

        composite = own.get(self.composite)
        if composite is None or composite.state not in ("accepted",):
            return actions
        if composite.frozen:
            return actions

        # Post the next stage once the previous one settled.
        for stage in self.STAGES:
            cid = self.stage_contracts.get(stage)
            if cid is None:
                actions.append(PostTask(
                    consequence_class=0,
                    escrow=self.params.get("stage_escrow", 50),
                    required_fields=("result",),
                    action_classes=(f"work-{stage}",),
                    parent_contract=self.composite,
                ))
                self.stage_contracts[stage] = "pending"
                return actions
            if cid == "pending":
                for c in view.own_contracts:
                    if c.role == "poster" and c.contract_id not in self.stage_contracts.values():
                        self.stage_contracts[stage] = c.contract_id
                        break
                else:
                    return actions
                cid = self.stage_contracts[stage]
            state = own.get(cid)
            if state is None or state.state not in ("settled",):
                return actions

        if not self.delivered:
            self.delivered = True
            actions.append(DeliverTask(self.composite, {"report": 1, "result": 1}))
        return actions


class StageWorkerPolicy(WorkerPolicy):
    """Specialist for one pipeline stage; only claims matching work."""

    def act(self, view, rng):
        stage = self.params["stage"]
        actions = list(self._deliveries(view, rng))
        open_work = [c for c in view.own_contracts if c.role == "worker" and c.state == "accepted"]
        if not open_work:
            for ad in view.open_tasks:
                if f"work-{stage}" in ad.action_classes and view.balance >= ad.bond_required:
                    actions.append(AcceptTask(ad.contract_id))
                    break
        return actions


POLICY_CLASSES: dict[str, type[Policy]] = {
    "idle": IdlePolicy,
    "poster": PosterPolicy,
    "honest-worker": HonestWorkerPolicy,
    "reckless-optimizer": RecklessOptimizerPolicy,
    "spam-trader": SpamTraderPolicy,
    "colluder-ring": ColluderRingPolicy,
    "tacit-colluder": TacitColluderPolicy,
    "sybil-swarm": SybilSwarmPolicy,
    "power-seeker": PowerSeekerPolicy,
    "injection-attacker": InjectionAttackerPolicy,
    "proto-agi-coalition": CoalitionPolicy,
    "orchestrator-pipeline": OrchestratorPolicy,
}


def build_policy(kind: str, params: Mapping[str, Any]) -> Policy:
    if kind == "honest-worker" and params.get("gullible"):
        return GullibleReaderPolicy()
    if kind == "honest-worker" and params.get("pricer") == "independent":
        return IndependentPricerPolicy()
    if kind == "honest-worker" and params.get("stage"):
        return StageWorkerPolicy()
    cls = POLICY_CLASSES.get(kind)
    if cls is None:
        raise ValueError(f"unknown policy kind {kind!r}")
    return cls()
