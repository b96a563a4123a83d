"""Systemic risk monitoring: indicator computation, tiered circuit
breakers behind hidden jittered thresholds, collusion detection (explicit
value rings and tacit price correlation), coalition detection for
emerging capability cores, and a power-concentration index.

The composite risk score and the coalition score are declared linear
stand-ins: weighted sums of normalized indicators, with all weights and
thresholds living in MonitorPolicy so scenarios can tune them. Breaker
thresholds are multiplied by a per-epoch jitter drawn from a secret seed
stream, so the published policy never reveals the exact trigger point.
Tier 3 and 4 states require an explicit anomaly classification (an
overseer or auto-classifier command) before they reset; who classifies
is recorded, not prescribed.

Identity collapsing uses union-find over shared ownership, spawn lineage,
and re-registered fingerprints, so deleting and re-registering agents
cannot move activity out of a watched cluster.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class MonitorPolicy:
    window: int = 64                 # trailing ticks for rate baselines
    z1: float = 6.0                  # agent-rate z threshold (tier 1)
    z2: float = 4.0                  # sub-market rate z threshold (tier 2)
    h2: float = 0.5                  # HHI threshold (tier 2)
    r3: float = 0.7                  # composite threshold (tier 3)
    r4: float = 0.9                  # composite threshold (tier 4)
    p4: float = 0.6                  # coalition score that forces tier 4
    theta: float = 0.6               # coalition flag threshold
    # Composite weights in snapshot field order:
    # (max agent z, market z, resource HHI, tool-generation rate).
    weights: tuple[float, float, float, float] = (0.2, 0.4, 0.2, 0.2)
    toolgen_norm: float = 8.0        # spawns per window mapping to 1.0
    ingest_norm: float = 64.0        # ingest volume mapping to 1.0 (reported)
    k2: int = 10                     # tier-2 tax multiplier
    rate_limit: int = 4              # tier-1 messages per tick cap
    t1_cooldown: int = 16            # ticks a tier-1 limit lasts
    epoch: int = 16                  # ticks per jitter epoch
    jitter_low: float = 0.9
    jitter_high: float = 1.1
    ring_rho: float = 0.8            # returned/originated ratio to flag a ring
    ring_max_len: int = 6
    corr_threshold: float = 0.95
    corr_min_cluster: int = 3
    cusum_drift: float = 0.05
    cusum_threshold: float = 0.5
    coalition_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    power_flag: float = 0.5          # absolute power-index flag level
    power_growth: float = 0.25       # window-over-window growth flag level
    detect_interval: int = 8         # ticks between detector sweeps


@dataclass(frozen=True)
class RiskSnapshot:
    tick: int
    agent_z: dict[bytes, float]
    market_z: dict[str, float]
    resource_shares: dict[bytes, float]
    hhi: dict[str, float]
    toolgen: dict[bytes, int]
    ingest_volume: int
    composite: dict[str, float]
    proto_scores: dict[tuple[bytes, ...], float] = field(default_factory=dict)

    def max_composite(self) -> float:
        return max(self.composite.values(), default=0.0)


@dataclass
class BreakerState:
    tier: int = 0
    scope: str = "global"            # "agent:<hex>" | "market:<id>" | "global"
    cause: str = ""
    trigger_tick: int = -1
    expiry_tick: int = -1            # -1 = no automatic expiry
    classification_pending: bool = False


@dataclass(frozen=True)
class BreakerTransition:
    tick: int
    tier: int
    scope: str
    cause: str
    expiry_tick: int
    classification_required: bool


def zscore(current: float, baseline: Sequence[float]) -> float:
    """Deviation of the current rate from the trailing baseline.

    Population std; a zero-variance baseline falls back to unit scale so
    the score stays finite, which also makes an all-constant window map
    to exactly 0.
    """
    if len(baseline) == 0:
        return 0.0
    arr = np.asarray(baseline, dtype=np.float64)
    mu = float(arr.mean())
    sigma = float(arr.std())
    if sigma == 0.0:
        if current == mu:
            return 0.0
        sigma = 1.0
    return (current - mu) / sigma


def hhi(shares: Iterable[float]) -> float:
    return float(sum(s * s for s in shares))


class IndicatorEngine:
    """Rolling per-tick counters feeding the risk snapshot."""

    def __init__(self, policy: MonitorPolicy) -> None:
        self.policy = policy
        self._msg_history: list[dict[bytes, int]] = []
        self._spawn_history: list[dict[bytes, int]] = []
        self._ingest_history: list[int] = []

    def record_tick(
        self,
        msg_counts: Mapping[bytes, int],
        spawn_counts: Mapping[bytes, int],
        ingest_count: int,
    ) -> None:
        self._msg_history.append(dict(msg_counts))
        self._spawn_history.append(dict(spawn_counts))
        self._ingest_history.append(ingest_count)
        keep = self.policy.window + 1
        if len(self._msg_history) > keep:
            self._msg_history = self._msg_history[-keep:]
            self._spawn_history = self._spawn_history[-keep:]
            self._ingest_history = self._ingest_history[-keep:]

    def compute(
        self,
        tick: int,
        agents_by_market: Mapping[str, Sequence[bytes]],
        resource_units: Mapping[bytes, int],
        proto_scores: Optional[dict[tuple[bytes, ...], float]] = None,
    ) -> RiskSnapshot:
        current = self._msg_history[-1] if self._msg_history else {}
        baseline_rows = self._msg_history[:-1][-self.policy.window:]

        agent_z: dict[bytes, float] = {}
        all_agents = sorted({a for m in agents_by_market.values() for a in m})
        for agent in all_agents:
            series = [row.get(agent, 0) for row in baseline_rows]
            agent_z[agent] = zscore(current.get(agent, 0), series)

        market_z: dict[str, float] = {}
        for market_id in sorted(agents_by_market):
            members = set(agents_by_market[market_id])
            series = [sum(v for a, v in row.items() if a in members) for row in baseline_rows]
            cur = sum(v for a, v in current.items() if a in members)
            market_z[market_id] = zscore(cur, series)

        total_resources = sum(resource_units.values())
        shares = {
            a: (resource_units.get(a, 0) / total_resources if total_resources else 0.0)
            for a in all_agents
        }
        hhi_by_market: dict[str, float] = {}
        for market_id in sorted(agents_by_market):
            members = agents_by_market[market_id]
            local_total = sum(resource_units.get(a, 0) for a in members)
            if local_total:
                hhi_by_market[market_id] = hhi(
                    resource_units.get(a, 0) / local_total for a in members
                )
            else:
                hhi_by_market[market_id] = 0.0

        spawn_rows = self._spawn_history[-self.policy.window:]
        toolgen = {
            a: sum(row.get(a, 0) for row in spawn_rows) for a in all_agents
        }
        ingest_volume = sum(self._ingest_history[-self.policy.window:])

        composite: dict[str, float] = {}
        w1, w2, w3, w4 = self.policy.weights
        for market_id in sorted(agents_by_market):
            members = agents_by_market[market_id]
            max_agent = max((agent_z[a] for a in members), default=0.0)
            spawns = sum(toolgen.get(a, 0) for a in members)
            composite[market_id] = (
                w1 * _clamp(max_agent / (2.0 * self.policy.z1))
                + w2 * _clamp(market_z[market_id] / (2.0 * self.policy.z2))
                + w3 * hhi_by_market[market_id]
                + w4 * _clamp(spawns / self.policy.toolgen_norm)
            )

        return RiskSnapshot(
            tick=tick,
            agent_z=agent_z,
            market_z=market_z,
            resource_shares=shares,
            hhi=hhi_by_market,
            toolgen=toolgen,
            ingest_volume=ingest_volume,
            composite=composite,
            proto_scores=proto_scores or {},
        )


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


class JitterStream:
    """Per-epoch multiplicative threshold jitter from a secret seed.

    Policies and agent views have no read path to this stream; the
    published thresholds stay fixed while the effective ones wander
    inside the band.
    """

    def __init__(self, seed: int, policy: MonitorPolicy) -> None:
        self._rng = np.random.default_rng(seed)
        self.policy = policy
        self._epoch = -1
        self._value = 1.0

    def at_tick(self, tick: int) -> float:
        epoch = tick // self.policy.epoch
        while self._epoch < epoch:
            self._value = float(
                self._rng.uniform(self.policy.jitter_low, self.policy.jitter_high)
            )
            self._epoch += 1
        return self._value


def evaluate_breakers(
    snapshot: RiskSnapshot,
    policy: MonitorPolicy,
    jitter: float,
    active: dict[str, BreakerState],
) -> list[BreakerTransition]:
    """Tiered escalation; every transition is returned for logging.

    Monotone in the indicators for fixed jitter: raising any input can
    only raise the triggered tier.
    """
    transitions: list[BreakerTransition] = []

    def fire(tier: int, scope: str, cause: str, expiry: int, needs_class: bool) -> None:
        state = active.get(scope)
        if state is not None and state.tier >= tier:
            return
        active[scope] = BreakerState(
            tier=tier, scope=scope, cause=cause, trigger_tick=snapshot.tick,
            expiry_tick=expiry, classification_pending=needs_class,
        )
        transitions.append(BreakerTransition(
            tick=snapshot.tick, tier=tier, scope=scope, cause=cause,
            expiry_tick=expiry, classification_required=needs_class,
        ))

    for agent, z in sorted(snapshot.agent_z.items()):
        if z >= policy.z1 * jitter:
            fire(1, f"agent:{agent.hex()}", "message-rate",
                 snapshot.tick + policy.t1_cooldown, False)

    for market_id in sorted(snapshot.market_z):
        if snapshot.market_z[market_id] >= policy.z2 * jitter:
            fire(2, f"market:{market_id}", "market-rate",
                 snapshot.tick + policy.t1_cooldown, False)
        if snapshot.hhi.get(market_id, 0.0) >= policy.h2 * jitter:
            fire(2, f"market:{market_id}", "resource-concentration",
                 snapshot.tick + policy.t1_cooldown, False)
        if snapshot.composite[market_id] >= policy.r3 * jitter:
            fire(3, f"market:{market_id}", "composite-risk", -1, True)

    if snapshot.max_composite() >= policy.r4 * jitter:
        fire(4, "global", "composite-risk", -1, True)
    for members, score in sorted(snapshot.proto_scores.items()):
        if score >= policy.p4:
            fire(4, "global", "coalition-score", -1, True)
            break

    return transitions


def expire_breakers(active: dict[str, BreakerState], tick: int) -> list[str]:
    """Drop tier-1/2 states past expiry; tier 3+ waits for classification."""
    cleared = []
    for scope, state in list(active.items()):
        if state.expiry_tick >= 0 and tick >= state.expiry_tick and not state.classification_pending:
            del active[scope]
            cleared.append(scope)
    return cleared


# ---------------------------------------------------------------------------
# Explicit collusion: value rings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RingFlag:
    members: tuple[bytes, ...]       # rotation starting at the evaluated origin
    originated: int
    returned: int

    @property
    def ratio(self) -> float:
        return self.returned / self.originated if self.originated else 0.0


def detect_cycles(
    flows: Mapping[tuple[bytes, bytes], int],
    rho: float = 0.8,
    max_len: int = 6,
) -> list[RingFlag]:
    """Flag simple cycles around which value is nearly conserved: the
    smallest edge must carry >= rho of the largest. Equivalently, the
    biggest originator gets back at least rho of what it put in, while
    ordinary payment chains (whose amounts vary task to task) stay clean.
    Reported rotated so the largest-originating node comes first."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    if max_len < 2:
        raise ValueError("cycle length bound must be >= 2")
    nodes = sorted({a for pair in flows for a in pair})
    out_edges: dict[bytes, list[bytes]] = {n: [] for n in nodes}
    for (src, dst), value in flows.items():
        if value > 0 and src != dst:
            out_edges[src].append(dst)
    for n in nodes:
        out_edges[n].sort()

    flags: list[RingFlag] = []
    seen: set[tuple[bytes, ...]] = set()

    def canonical(cycle: tuple[bytes, ...]) -> tuple[bytes, ...]:
        k = cycle.index(min(cycle))
        return cycle[k:] + cycle[:k]

    # Enumerate each simple cycle once by anchoring at its minimal node.
    for start in nodes:
        stack: list[tuple[bytes, tuple[bytes, ...]]] = [(start, (start,))]
        while stack:
            node, path = stack.pop()
            for nxt in out_edges[node]:
                if nxt == start and len(path) >= 2:
                    cycle = canonical(path)
                    if cycle in seen:
                        continue
                    seen.add(cycle)
                    flag = _evaluate_ring(cycle, flows, rho)
                    if flag is not None:
                        flags.append(flag)
                elif nxt > start and nxt not in path and len(path) < max_len:
                    stack.append((nxt, path + (nxt,)))
    flags.sort(key=lambda f: f.members)
    return flags


def _evaluate_ring(
    cycle: tuple[bytes, ...], flows: Mapping[tuple[bytes, bytes], int], rho: float
) -> Optional[RingFlag]:
    n = len(cycle)
    edges = [flows.get((cycle[k], cycle[(k + 1) % n]), 0) for k in range(n)]
    if min(edges) <= 0:
        return None
    if min(edges) < rho * max(edges):
        return None
    k = edges.index(max(edges))
    rotation = cycle[k:] + cycle[:k]
    returned = flows.get((rotation[-1], rotation[0]), 0)
    return RingFlag(members=rotation, originated=max(edges), returned=returned)


# ---------------------------------------------------------------------------
# Tacit collusion: outcome correlation without communication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TacitFlag:
    category: str
    members: tuple[bytes, ...]
    min_pairwise_correlation: float


def detect_tacit(
    price_series: Mapping[str, Mapping[bytes, Sequence[float]]],
    message_edges: Iterable[tuple[bytes, bytes]],
    corr_threshold: float = 0.95,
    min_cluster: int = 3,
) -> list[TacitFlag]:
    """Clusters of agents in one service category whose prices co-move
    near-perfectly with zero direct messages among them.

    Constant series carry zero correlation by convention. Clusters are
    maximal cliques in the thresholded correlation graph.
    """
    contacted: set[frozenset[bytes]] = {
        frozenset((a, b)) for a, b in message_edges if a != b
    }
    flags: list[TacitFlag] = []
    for category in sorted(price_series):
        series = price_series[category]
        agents = sorted(series)
        if len(agents) < min_cluster:
            continue
        corr: dict[frozenset[bytes], float] = {}
        for a, b in itertools.combinations(agents, 2):
            corr[frozenset((a, b))] = _safe_corr(series[a], series[b])

        def linked(a: bytes, b: bytes) -> bool:
            key = frozenset((a, b))
            return corr.get(key, 0.0) >= corr_threshold and key not in contacted

        adjacency = {a: {b for b in agents if b != a and linked(a, b)} for a in agents}
        for clique in _bron_kerbosch(adjacency):
            if len(clique) >= min_cluster:
                members = tuple(sorted(clique))
                min_corr = min(
                    corr[frozenset(p)] for p in itertools.combinations(members, 2)
                )
                flags.append(TacitFlag(category, members, min_corr))
    flags.sort(key=lambda f: (f.category, f.members))
    return flags


def _safe_corr(a: Sequence[float], b: Sequence[float]) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    n = min(len(x), len(y))
    if n < 2:
        return 0.0
    x, y = x[-n:], y[-n:]
    if x.std() == 0.0 or y.std() == 0.0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def _bron_kerbosch(adjacency: Mapping[bytes, set[bytes]]) -> list[set[bytes]]:
    """Maximal cliques with pivoting; deterministic over sorted nodes."""
    cliques: list[set[bytes]] = []

    def expand(r: set[bytes], p: set[bytes], x: set[bytes]) -> None:
        if not p and not x:
            cliques.append(set(r))
            return
        pivot = max(sorted(p | x), key=lambda v: len(adjacency[v] & p))
        for v in sorted(p - adjacency[pivot]):
            expand(r | {v}, p & adjacency[v], x & adjacency[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(adjacency), set())
    return cliques


# ---------------------------------------------------------------------------
# Identity collapsing
# ---------------------------------------------------------------------------


class UnionFind:
    def __init__(self) -> None:
        self._parent: dict[bytes, bytes] = {}

    def add(self, item: bytes) -> None:
        self._parent.setdefault(item, item)

    def find(self, item: bytes) -> bytes:
        self.add(item)
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a: bytes, b: bytes) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Deterministic: smaller id becomes the root.
            lo, hi = sorted((ra, rb))
            self._parent[hi] = lo

    def groups(self) -> dict[bytes, tuple[bytes, ...]]:
        out: dict[bytes, list[bytes]] = {}
        for item in self._parent:
            out.setdefault(self.find(item), []).append(item)
        return {root: tuple(sorted(members)) for root, members in out.items()}


def meta_nodes(
    owners: Mapping[bytes, str],
    parents: Mapping[bytes, Optional[bytes]],
    rekeyed: Iterable[tuple[bytes, bytes]] = (),
) -> dict[bytes, tuple[bytes, ...]]:
    """Collapse agent ids by shared owner, spawn lineage, and re-registered
    fingerprints. Returns root id -> sorted member tuple."""
    uf = UnionFind()
    by_owner: dict[str, bytes] = {}
    for agent in sorted(owners):
        uf.add(agent)
        owner = owners[agent]
        if owner in by_owner:
            uf.union(agent, by_owner[owner])
        else:
            by_owner[owner] = agent
    for child in sorted(parents):
        parent = parents[child]
        if parent is not None:
            uf.union(child, parent)
    for old, new in rekeyed:
        uf.union(old, new)
    return uf.groups()


# ---------------------------------------------------------------------------
# Coalition detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoalitionReport:
    members: tuple[bytes, ...]       # meta-node roots
    density: float                   # normalized pairwise connectivity
    capability_coverage: float
    resource_share: float
    jump_statistic: float
    score: float
    flagged: bool


def greedy_peel(
    weights: Mapping[tuple[bytes, bytes], float],
    nodes: Iterable[bytes],
) -> tuple[tuple[bytes, ...], float]:
    """Densest-subgraph approximation: repeatedly remove the minimum
    weighted-degree node and keep the prefix maximizing total weight over
    node count (a 2-approximation of the exact optimum)."""
    nodes = sorted(set(nodes))
    adj: dict[bytes, dict[bytes, float]] = {n: {} for n in nodes}
    for (a, b), w in weights.items():
        if a == b or w <= 0 or a not in adj or b not in adj:
            continue
        adj[a][b] = adj[a].get(b, 0.0) + w
        adj[b][a] = adj[b].get(a, 0.0) + w

    degree = {n: sum(adj[n].values()) for n in nodes}
    total = sum(degree.values()) / 2.0
    remaining = set(nodes)
    best_density = total / len(remaining) if remaining else 0.0
    best_set = tuple(sorted(remaining))
    removal_order: list[bytes] = []

    while len(remaining) > 1:
        victim = min(sorted(remaining), key=lambda n: degree[n])
        for neighbor, w in adj[victim].items():
            if neighbor in remaining:
                degree[neighbor] -= w
                total -= w
        remaining.discard(victim)
        removal_order.append(victim)
        density = total / len(remaining)
        if density > best_density:
            best_density = density
            best_set = tuple(sorted(remaining))
    return best_set, best_density


def cusum_jump(series: Sequence[float], drift: float, reference_frac: float = 0.25) -> float:
    """One-sided cumulative-sum statistic for upward level shifts.

    The reference mean comes from the leading fraction of the series; the
    returned value is the maximum accumulated positive excursion.
    """
    arr = np.asarray(series, dtype=np.float64)
    if len(arr) < 2:
        return 0.0
    ref_len = max(1, int(len(arr) * reference_frac))
    mu = float(arr[:ref_len].mean())
    g = 0.0
    peak = 0.0
    for x in arr[ref_len:]:
        g = max(0.0, g + (float(x) - mu - drift))
        peak = max(peak, g)
    return peak


def connected_components(
    nodes: Iterable[bytes], weights: Mapping[tuple[bytes, bytes], float]
) -> list[list[bytes]]:
    nodes = sorted(set(nodes))
    neighbors: dict[bytes, set[bytes]] = {n: set() for n in nodes}
    for (a, b), w in weights.items():
        if w > 0 and a != b and a in neighbors and b in neighbors:
            neighbors[a].add(b)
            neighbors[b].add(a)
    seen: set[bytes] = set()
    components = []
    for n in nodes:
        if n in seen:
            continue
        comp = []
        stack = [n]
        seen.add(n)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nxt in sorted(neighbors[cur]):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        components.append(sorted(comp))
    return components


def detect_coalitions(
    edge_weights: Mapping[tuple[bytes, bytes], float],
    capabilities: Mapping[bytes, frozenset[str]],
    taxonomy: frozenset[str],
    resources: Mapping[bytes, int],
    success_series: Mapping[bytes, Sequence[float]],
    policy: MonitorPolicy,
) -> list[CoalitionReport]:
    """Candidate capability cores per connected component via greedy
    peeling, scored on density, capability coverage, resource share, and
    a success-rate jump statistic."""
    nodes = sorted(set(capabilities) | {a for pair in edge_weights for a in pair})
    total_resources = sum(resources.get(n, 0) for n in nodes)
    reports: list[CoalitionReport] = []
    w1, w2, w3, w4 = policy.coalition_weights

    for component in connected_components(nodes, edge_weights):
        members, _ = greedy_peel(
            {k: v for k, v in edge_weights.items()
             if k[0] in component and k[1] in component},
            component,
        )
        if not members:
            continue
        density = _simple_density(members, edge_weights)
        covered = frozenset().union(*(capabilities.get(m, frozenset()) for m in members)) \
            if members else frozenset()
        coverage = len(covered & taxonomy) / len(taxonomy) if taxonomy else 0.0
        share = (
            sum(resources.get(m, 0) for m in members) / total_resources
            if total_resources else 0.0
        )
        series = _combined_series([success_series.get(m, ()) for m in members])
        jump = cusum_jump(series, policy.cusum_drift) if len(series) >= 2 else 0.0
        score = (
            w1 * density
            + w2 * coverage
            + w3 * share
            + w4 * (1.0 if jump > policy.cusum_threshold else 0.0)
        )
        reports.append(CoalitionReport(
            members=tuple(members),
            density=density,
            capability_coverage=coverage,
            resource_share=share,
            jump_statistic=jump,
            score=score,
            flagged=score >= policy.theta,
        ))
    reports.sort(key=lambda r: (-r.score, r.members))
    return reports


def _simple_density(members: Sequence[bytes], weights: Mapping[tuple[bytes, bytes], float]) -> float:
    """Fraction of member pairs with any positive flow (either direction)."""
    if len(members) < 2:
        return 0.0
    member_set = set(members)
    linked = set()
    for (a, b), w in weights.items():
        if w > 0 and a != b and a in member_set and b in member_set:
            linked.add(frozenset((a, b)))
    possible = len(members) * (len(members) - 1) / 2
    return len(linked) / possible


def _combined_series(series_list: Sequence[Sequence[float]]) -> list[float]:
    lengths = [len(s) for s in series_list if len(s)]
    if not lengths:
        return []
    n = max(lengths)
    out = []
    for i in range(n):
        vals = [s[i] for s in series_list if len(s) > i]
        out.append(float(np.mean(vals)) if vals else 0.0)
    return out


# ---------------------------------------------------------------------------
# Power index
# ---------------------------------------------------------------------------


def eigencentrality(
    nodes: Sequence[bytes],
    flows: Mapping[tuple[bytes, bytes], float],
    tol: float = 1e-8,
    max_iter: int = 100,
) -> dict[bytes, float]:
    """Power iteration on the symmetrized flow matrix, per connected
    component, each component scaled to unit maximum. Edgeless nodes get 0."""
    nodes = sorted(set(nodes))
    index = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    mat = np.zeros((n, n))
    for (a, b), w in flows.items():
        if a in index and b in index and a != b and w > 0:
            mat[index[a], index[b]] += w
            mat[index[b], index[a]] += w

    out = {node: 0.0 for node in nodes}
    for component in connected_components(nodes, flows):
        idxs = [index[c] for c in component]
        if len(idxs) == 1 or mat[np.ix_(idxs, idxs)].sum() == 0:
            continue
        sub = mat[np.ix_(idxs, idxs)]
        vec = np.ones(len(idxs)) / len(idxs)
        for _ in range(max_iter):
            # Identity shift keeps bipartite structures from oscillating.
            nxt = sub @ vec + vec
            norm = np.linalg.norm(nxt)
            if norm == 0:
                break
            nxt /= norm
            if np.linalg.norm(nxt - vec) < tol:
                vec = nxt
                break
            vec = nxt
        peak = vec.max()
        if peak > 0:
            vec = vec / peak
        for i, c in enumerate(component):
            out[c] = float(vec[i])
    return out


def power_index(
    nodes: Sequence[bytes],
    flows: Mapping[tuple[bytes, bytes], float],
    resources: Mapping[bytes, int],
    affordance_breadth: Mapping[bytes, float],
) -> dict[bytes, float]:
    """Influence x resource share x affordance breadth per meta-node."""
    centrality = eigencentrality(nodes, flows)
    total = sum(resources.get(n, 0) for n in nodes)
    out = {}
    for node in nodes:
        share = resources.get(node, 0) / total if total else 0.0
        out[node] = centrality[node] * share * affordance_breadth.get(node, 0.0)
    return out


def power_flags(
    current: Mapping[bytes, float],
    previous: Mapping[bytes, float],
    policy: MonitorPolicy,
) -> list[bytes]:
    """Nodes whose index crossed the absolute level or grew too fast."""
    flagged = []
    for node in sorted(current):
        value = current[node]
        prior = previous.get(node, 0.0)
        # First appearance is not growth; only established indices rate-flag.
        growth = (value - prior) / prior if prior > 0 else 0.0
        if value > policy.power_flag or growth > policy.power_growth:
            flagged.append(node)
    return flagged
