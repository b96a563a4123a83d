"""Post-incident causal reconstruction from the event chain.

Causality here is structural, not counterfactual: edges are re-derivable
relations between entries (contract lineage, messages received before a
causally linked action, info-store reads, spawn lineage), and the root
set is the minimal in-horizon ancestors of the investigated outcome.
Responsibility shares are a deliberately simple authored-node count per
meta-node, exact in rational arithmetic; a baseline, not a legal
standard. The causal window for message edges is the horizon parameter;
results are sensitive to it and callers should report which horizon they
used.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .ledger import SYSTEM_ACTOR, EntryKind, LedgerEntry

EDGE_KINDS = ("delegation", "message", "data-read", "settlement", "spawn")

_CONTRACT_KINDS = (
    EntryKind.TASK_POSTED,
    EntryKind.TASK_ACCEPTED,
    EntryKind.TASK_DELIVERED,
    EntryKind.VERDICT,
    EntryKind.SETTLE,
    EntryKind.FORFEIT,
)


class ForensicsError(Exception):
    pass


@dataclass(frozen=True)
class CausalEdge:
    src: int
    dst: int
    kind: str


@dataclass(frozen=True)
class CausalGraph:
    outcome: int
    nodes: tuple[int, ...]
    edges: tuple[CausalEdge, ...]
    roots: tuple[int, ...]


def _contract_of(entry: LedgerEntry) -> Optional[str]:
    if entry.kind in _CONTRACT_KINDS:
        return entry.fields().get("contract")
    return None


def trace(entries: Sequence[LedgerEntry], outcome_seq: int, horizon: int) -> CausalGraph:
    """Backward closure from the outcome entry within the tick horizon."""
    if not 0 <= outcome_seq < len(entries):
        raise ForensicsError(f"no entry with seq {outcome_seq}")
    outcome = entries[outcome_seq]
    min_tick = outcome.tick - horizon

    by_contract: dict[str, list[LedgerEntry]] = {}
    ingest_by_id: dict[str, LedgerEntry] = {}
    spawn_of: dict[bytes, LedgerEntry] = {}
    messages_to: dict[bytes, list[LedgerEntry]] = {}
    for e in entries:
        cid = _contract_of(e)
        if cid is not None:
            by_contract.setdefault(cid, []).append(e)
        if e.kind is EntryKind.INGEST:
            ingest_by_id[e.fields()["entry_id"]] = e
        elif e.kind is EntryKind.SPAWN:
            spawn_of[e.fields()["agent"]] = e
        elif e.kind is EntryKind.MESSAGE:
            messages_to.setdefault(e.fields()["to"], []).append(e)

    nodes: set[int] = set()
    edges: set[CausalEdge] = set()
    stack = [outcome_seq]

    def admit(src: LedgerEntry, dst_seq: int, kind: str) -> None:
        if src.tick < min_tick or src.seq >= dst_seq:
            return
        edges.add(CausalEdge(src=src.seq, dst=dst_seq, kind=kind))
        if src.seq not in nodes:
            nodes.add(src.seq)
            stack.append(src.seq)

    nodes.add(outcome_seq)
    while stack:
        seq = stack.pop()
        entry = entries[seq]

        # Contract lineage: each lifecycle entry follows its predecessor.
        cid = _contract_of(entry)
        if cid is not None:
            lineage = by_contract.get(cid, [])
            for prior in lineage:
                if prior.seq < seq:
                    admit(prior, seq, "settlement")
            # Delegation: the sub-task's post follows the parent's lineage.
            post = lineage[0] if lineage else None
            if post is not None and post.kind is EntryKind.TASK_POSTED:
                parent_cid = post.fields().get("parent_contract")
                if parent_cid:
                    for parent_entry in by_contract.get(parent_cid, []):
                        if parent_entry.seq < post.seq:
                            admit(parent_entry, post.seq, "delegation")

        # Messages the acting agent received before this action.
        if entry.actor != SYSTEM_ACTOR:
            for msg in messages_to.get(entry.actor, ()):
                if msg.seq < seq:
                    admit(msg, seq, "message")
            spawn_entry = spawn_of.get(entry.actor)
            if spawn_entry is not None and spawn_entry.seq < seq:
                admit(spawn_entry, seq, "spawn")

        # Info entries this action read: the writer's ingest becomes a node.
        # Any entry may declare its parameter provenance via an "info:" note
        # (blocked attempts included).
        fields = entry.fields()
        if entry.kind is EntryKind.TASK_DELIVERED:
            for read_id in fields.get("info_reads", ()):
                src = ingest_by_id.get(read_id)
                if src is not None:
                    admit(src, seq, "data-read")
        note = fields.get("note", "")
        if isinstance(note, str) and note.startswith("info:"):
            src = ingest_by_id.get(note[len("info:"):])
            if src is not None:
                admit(src, seq, "data-read")

    targets_with_parents = {e.dst for e in edges}
    roots = tuple(sorted(n for n in nodes if n not in targets_with_parents))
    return CausalGraph(
        outcome=outcome_seq,
        nodes=tuple(sorted(nodes)),
        edges=tuple(sorted(edges, key=lambda e: (e.src, e.dst, e.kind))),
        roots=roots,
    )


def edge_valid(entries: Sequence[LedgerEntry], edge: CausalEdge) -> bool:
    """Re-derive one edge from the two entries it connects."""
    src, dst = entries[edge.src], entries[edge.dst]
    if src.seq >= dst.seq:
        return False
    if edge.kind == "settlement":
        return _contract_of(src) is not None and _contract_of(src) == _contract_of(dst)
    if edge.kind == "delegation":
        if dst.kind is not EntryKind.TASK_POSTED:
            return False
        return _contract_of(src) == dst.fields().get("parent_contract")
    if edge.kind == "message":
        return src.kind is EntryKind.MESSAGE and src.fields()["to"] == dst.actor
    if edge.kind == "spawn":
        return src.kind is EntryKind.SPAWN and src.fields()["agent"] == dst.actor
    if edge.kind == "data-read":
        if src.kind is not EntryKind.INGEST:
            return False
        entry_id = src.fields()["entry_id"]
        if dst.kind is EntryKind.TASK_DELIVERED and \
                entry_id in dst.fields().get("info_reads", ()):
            return True
        return dst.fields().get("note") == f"info:{entry_id}"
    return False


def attribute(
    graph: CausalGraph,
    entries: Sequence[LedgerEntry],
    meta_of: Optional[Mapping[bytes, bytes]] = None,
) -> dict[bytes, Fraction]:
    """Responsibility shares: authored in-graph entries per meta-node.

    System-authored entries are excluded from the denominator; shares are
    exact rationals summing to 1.
    """
    counts: dict[bytes, int] = {}
    total = 0
    for seq in graph.nodes:
        actor = entries[seq].actor
        if actor == SYSTEM_ACTOR:
            continue
        node = meta_of.get(actor, actor) if meta_of else actor
        counts[node] = counts.get(node, 0) + 1
        total += 1
    if total == 0:
        return {}
    return {node: Fraction(n, total) for node, n in sorted(counts.items())}


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------


def to_record(graph: CausalGraph, entries: Sequence[LedgerEntry]) -> dict:
    """Structured record with the node detail the console renders."""
    return {
        "outcome": graph.outcome,
        "nodes": [
            {
                "seq": seq,
                "tick": entries[seq].tick,
                "kind": entries[seq].kind.name.lower().replace("_", "-"),
                "actor": entries[seq].actor.hex(),
                "root": seq in graph.roots,
            }
            for seq in graph.nodes
        ],
        "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind} for e in graph.edges],
        "roots": list(graph.roots),
    }


def from_record(record: Mapping) -> CausalGraph:
    return CausalGraph(
        outcome=record["outcome"],
        nodes=tuple(n["seq"] for n in record["nodes"]),
        edges=tuple(CausalEdge(e["src"], e["dst"], e["kind"]) for e in record["edges"]),
        roots=tuple(record["roots"]),
    )


def to_dot(graph: CausalGraph, entries: Sequence[LedgerEntry]) -> str:
    """Bit-stable DOT text: sorted nodes and edges, roots double-circled."""
    lines = ["digraph causal {", "  rankdir=LR;"]
    for seq in graph.nodes:
        e = entries[seq]
        kind = e.kind.name.lower().replace("_", "-")
        shape = "doublecircle" if seq in graph.roots else "box"
        peripheries = ' color="red"' if seq == graph.outcome else ""
        lines.append(
            f'  n{seq} [label="{seq}:{kind}\\nt{e.tick} {e.actor.hex()[:8]}" '
            f"shape={shape}{peripheries}];"
        )
    for edge in graph.edges:
        lines.append(f'  n{edge.src} -> n{edge.dst} [label="{edge.kind}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: CausalGraph, entries: Sequence[LedgerEntry], fmt: str) -> str:
    if fmt == "dot":
        return to_dot(graph, entries)
    if fmt == "json":
        import json

        return json.dumps(to_record(graph, entries), indent=2, sort_keys=True)
    raise ForensicsError(f"unknown format {fmt!r}")
