"""Scenario configuration: a versioned, documented JSON format that fully
determines a run. The canonical config bytes seed the chain's genesis
digest, binding every run artifact to its configuration.

Validation reports field-precise paths ("cohorts[2].count: ...") rather
than schema jargon. Monitor policy and jitter seeds are part of the
config but are never exposed to agent policies; the kernel builds views
that simply do not contain them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional

from . import codec
from .economics import EconPolicy
from .market import GatewayRule, MarketPolicy, Role, SubMarket
from .reputation import ReputationPolicy
from .sentinel import MonitorPolicy

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    """Configuration rejected; message carries the offending field path."""


@dataclass(frozen=True)
class CohortSpec:
    name: str
    count: int
    policy_kind: str
    policy_params: dict[str, Any] = field(default_factory=dict)
    roles: tuple[str, ...] = ()
    capabilities: tuple[str, ...] = ()
    endowment: int = 1000
    resource_units: int = 10
    sub_market: str = "main"
    owners: str = "per-agent"        # "per-agent" | "shared"
    certified: bool = False


POLICY_KINDS = frozenset({
    "honest-worker", "reckless-optimizer", "spam-trader", "colluder-ring",
    "tacit-colluder", "sybil-swarm", "power-seeker", "injection-attacker",
    "proto-agi-coalition", "orchestrator-pipeline", "poster", "idle",
})


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration: int
    cohorts: tuple[CohortSpec, ...]
    roles: tuple[Role, ...]
    sub_markets: tuple[SubMarket, ...]
    gateways: tuple[GatewayRule, ...] = ()
    econ: EconPolicy = EconPolicy()
    market_policy: MarketPolicy = MarketPolicy()
    reputation: ReputationPolicy = ReputationPolicy()
    monitor: MonitorPolicy = MonitorPolicy()
    capability_taxonomy: tuple[str, ...] = ()
    embedding_dim: int = 8
    premiums_enabled: bool = False
    sanitizer_p_detect: float = 1.0
    ifc_class_gate: int = 3
    jitter_seed: Optional[int] = None
    live: bool = False
    tick_rate: float = 20.0          # ticks per second in live mode
    name: str = "scenario"

    def canonical_bytes(self) -> bytes:
        return codec.canonical_json_bytes(self.to_config())

    def to_config(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "live": self.live,
            "tick_rate": self.tick_rate,
            "embedding_dim": self.embedding_dim,
            "premiums_enabled": self.premiums_enabled,
            "sanitizer_p_detect": self.sanitizer_p_detect,
            "ifc_class_gate": self.ifc_class_gate,
            "jitter_seed": self.jitter_seed,
            "capability_taxonomy": list(self.capability_taxonomy),
            "cohorts": [
                {
                    "name": c.name,
                    "count": c.count,
                    "policy": {"kind": c.policy_kind, **({"params": c.policy_params} if c.policy_params else {})},
                    "roles": list(c.roles),
                    "capabilities": list(c.capabilities),
                    "endowment": c.endowment,
                    "resource_units": c.resource_units,
                    "sub_market": c.sub_market,
                    "owners": c.owners,
                    "certified": c.certified,
                }
                for c in self.cohorts
            ],
            "roles": [
                {"name": r.name, "action_classes": sorted(r.action_classes),
                 "data_scopes": sorted(r.data_scopes)}
                for r in self.roles
            ],
            "sub_markets": [
                {"id": m.sub_market_id, **({"parent": m.parent} if m.parent else {}),
                 "tax_multiplier": m.tax_multiplier,
                 **({"allowed_classes": sorted(m.allowed_classes)} if m.allowed_classes is not None else {}),
                 "paused": m.paused}
                for m in self.sub_markets
            ],
            "gateways": [
                {"source": g.source, "target": g.target,
                 "action_class": g.action_class, "fee": g.fee}
                for g in self.gateways
            ],
            "econ": asdict(self.econ),
            "market_policy": {
                "bond_base": self.market_policy.bond_base,
                "reputation_gates": list(self.market_policy.reputation_gates),
                "forfeit_split": self.market_policy.forfeit_split,
                "certificate_class": self.market_policy.certificate_class,
                "insurance_class": self.market_policy.insurance_class,
            },
            "reputation": {
                "s0": self.reputation.s0,
                "alpha_plus": self.reputation.alpha_plus,
                "alpha_minus": self.reputation.alpha_minus,
                "stake_ref": self.reputation.stake_ref,
                "age_ref": self.reputation.age_ref,
                "gates": list(self.reputation.gates),
                "observable": self.reputation.observable,
            },
            "monitor": {
                "window": self.monitor.window,
                "z1": self.monitor.z1,
                "z2": self.monitor.z2,
                "h2": self.monitor.h2,
                "r3": self.monitor.r3,
                "r4": self.monitor.r4,
                "p4": self.monitor.p4,
                "theta": self.monitor.theta,
                "weights": list(self.monitor.weights),
                "toolgen_norm": self.monitor.toolgen_norm,
                "ingest_norm": self.monitor.ingest_norm,
                "k2": self.monitor.k2,
                "rate_limit": self.monitor.rate_limit,
                "t1_cooldown": self.monitor.t1_cooldown,
                "epoch": self.monitor.epoch,
                "jitter_low": self.monitor.jitter_low,
                "jitter_high": self.monitor.jitter_high,
                "ring_rho": self.monitor.ring_rho,
                "ring_max_len": self.monitor.ring_max_len,
                "corr_threshold": self.monitor.corr_threshold,
                "corr_min_cluster": self.monitor.corr_min_cluster,
                "cusum_drift": self.monitor.cusum_drift,
                "cusum_threshold": self.monitor.cusum_threshold,
                "coalition_weights": list(self.monitor.coalition_weights),
                "power_flag": self.monitor.power_flag,
                "power_growth": self.monitor.power_growth,
                "detect_interval": self.monitor.detect_interval,
            },
        }

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_config(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Parsing with field-precise diagnostics
# ---------------------------------------------------------------------------


_MISSING = object()


class _Ctx:
    def __init__(self, data: Mapping[str, Any], path: str = "") -> None:
        self.data = data
        self.path = path

    def _fail(self, key: str, why: str) -> ScenarioError:
        where = f"{self.path}.{key}" if self.path else key
        return ScenarioError(f"{where}: {why}")

    def get(self, key: str, kind: type, default: Any = _MISSING) -> Any:
        if key not in self.data or self.data[key] is None:
            if default is not _MISSING:
                return default
            raise self._fail(key, "missing required field")
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            raise self._fail(key, "expected integer, got boolean")
        if not isinstance(value, kind):
            raise self._fail(key, f"expected {kind.__name__}, got {type(value).__name__}")
        return value

    def require_positive(self, key: str, value):
        if value < 0:
            raise self._fail(key, "must be non-negative")
        return value

    def sub(self, key: str, index: Optional[int] = None) -> "_Ctx":
        node = self.data[key] if index is None else self.data[key][index]
        suffix = key if index is None else f"{key}[{index}]"
        path = f"{self.path}.{suffix}" if self.path else suffix
        if not isinstance(node, Mapping):
            raise ScenarioError(f"{path}: expected object")
        return _Ctx(node, path)


def load_scenario(source: str | Mapping[str, Any]) -> Scenario:
    """Parse and validate a scenario from a JSON file path or a mapping."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"not valid JSON: {exc}") from None
    else:
        data = dict(source)
    if not isinstance(data, Mapping):
        raise ScenarioError("top level: expected object")
    ctx = _Ctx(data)

    version = ctx.get("schema_version", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: unsupported version {version}")

    seed = ctx.get("seed", int)
    duration = ctx.require_positive("duration", ctx.get("duration", int))

    roles = []
    for i, raw in enumerate(data.get("roles", [])):
        sub = ctx.sub("roles", i)
        roles.append(Role(
            name=sub.get("name", str),
            action_classes=frozenset(sub.get("action_classes", list, [])),
            data_scopes=frozenset(sub.get("data_scopes", list, [])),
        ))
    role_names = {r.name for r in roles}

    sub_markets = []
    for i, raw in enumerate(data.get("sub_markets", [{"id": "main"}])):
        if not isinstance(raw, Mapping):
            raise ScenarioError(f"sub_markets[{i}]: expected object")
        sub = _Ctx(raw, f"sub_markets[{i}]")
        allowed = sub.get("allowed_classes", list, None)
        sub_markets.append(SubMarket(
            sub_market_id=sub.get("id", str),
            parent=sub.get("parent", str, None),
            tax_multiplier=sub.get("tax_multiplier", int, 1),
            allowed_classes=frozenset(allowed) if allowed is not None else None,
            paused=sub.get("paused", bool, False),
        ))
    market_ids = {m.sub_market_id for m in sub_markets}

    gateways = []
    for i, raw in enumerate(data.get("gateways", [])):
        sub = ctx.sub("gateways", i)
        rule = GatewayRule(
            source=sub.get("source", str),
            target=sub.get("target", str),
            action_class=sub.get("action_class", str),
            fee=sub.require_positive("fee", sub.get("fee", int, 10)),
        )
        for end, label in ((rule.source, "source"), (rule.target, "target")):
            if end not in market_ids:
                raise ScenarioError(f"gateways[{i}].{label}: unknown sub-market {end!r}")
        gateways.append(rule)

    cohorts = []
    if "cohorts" not in data:
        raise ScenarioError("cohorts: missing required field")
    for i, raw in enumerate(data["cohorts"]):
        sub = ctx.sub("cohorts", i)
        policy_node = sub.sub("policy") if "policy" in sub.data else None
        if policy_node is None:
            raise ScenarioError(f"cohorts[{i}].policy: missing required field")
        kind = policy_node.get("kind", str)
        if kind not in POLICY_KINDS:
            raise ScenarioError(f"cohorts[{i}].policy.kind: unknown policy {kind!r}")
        cohort = CohortSpec(
            name=sub.get("name", str),
            count=sub.require_positive("count", sub.get("count", int)),
            policy_kind=kind,
            policy_params=dict(policy_node.get("params", dict, {})),
            roles=tuple(sub.get("roles", list, [])),
            capabilities=tuple(sub.get("capabilities", list, [])),
            endowment=sub.require_positive("endowment", sub.get("endowment", int, 1000)),
            resource_units=sub.require_positive(
                "resource_units", sub.get("resource_units", int, 10)),
            sub_market=sub.get("sub_market", str, "main"),
            owners=sub.get("owners", str, "per-agent"),
            certified=sub.get("certified", bool, False),
        )
        for role in cohort.roles:
            if role not in role_names:
                raise ScenarioError(f"cohorts[{i}].roles: unknown role {role!r}")
        if cohort.sub_market not in market_ids:
            raise ScenarioError(
                f"cohorts[{i}].sub_market: unknown sub-market {cohort.sub_market!r}")
        if cohort.owners not in ("per-agent", "shared"):
            raise ScenarioError(f"cohorts[{i}].owners: expected 'per-agent' or 'shared'")
        cohorts.append(cohort)

    def _policy(section: str, cls, **renames):
        node = data.get(section, {})
        if not isinstance(node, Mapping):
            raise ScenarioError(f"{section}: expected object")
        kwargs = {}
        import dataclasses as _dc
        names = {f.name for f in _dc.fields(cls)}
        for key, value in node.items():
            target = renames.get(key, key)
            if target not in names:
                raise ScenarioError(f"{section}.{key}: unknown field")
            if isinstance(value, list):
                value = tuple(value)
            kwargs[target] = value
        try:
            return cls(**kwargs)
        except Exception as exc:
            raise ScenarioError(f"{section}: {exc}") from None

    econ = _policy("econ", EconPolicy)
    market_policy = _policy("market_policy", MarketPolicy)
    rep = _policy("reputation", ReputationPolicy)
    monitor = _policy("monitor", MonitorPolicy)

    return Scenario(
        seed=seed,
        duration=duration,
        cohorts=tuple(cohorts),
        roles=tuple(roles),
        sub_markets=tuple(sub_markets),
        gateways=tuple(gateways),
        econ=econ,
        market_policy=market_policy,
        reputation=rep,
        monitor=monitor,
        capability_taxonomy=tuple(data.get("capability_taxonomy", [])),
        embedding_dim=ctx.get("embedding_dim", int, 8),
        premiums_enabled=ctx.get("premiums_enabled", bool, False),
        sanitizer_p_detect=ctx.get("sanitizer_p_detect", float, 1.0),
        ifc_class_gate=ctx.get("ifc_class_gate", int, 3),
        jitter_seed=ctx.get("jitter_seed", int, None),
        live=ctx.get("live", bool, False),
        tick_rate=ctx.get("tick_rate", float, 20.0),
        name=ctx.get("name", str, "scenario"),
    )
