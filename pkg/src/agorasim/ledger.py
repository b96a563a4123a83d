"""Tamper-evident event chain and the agent identity registry.

The chain is append-only and single-writer: every market event becomes a
hash-chained entry whose digest covers the previous digest plus the
canonical body bytes. Verification walks the chain and reports the first
sequence number whose hash no longer matches, so any single-bit mutation
of a non-final entry is pinpointed deterministically.

The identity registry binds each agent to a public-key fingerprint and a
legal owner, tracks spawn lineage, and guarantees that following parent
links always terminates at a registered owner. Revoked fingerprints can
never re-enter as active.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Iterable, Iterator, Mapping, Optional

from . import codec

SYSTEM_ACTOR = b"\x00" * 32


class LedgerError(Exception):
    pass


class TimeRegressionError(LedgerError):
    """Append with a tick lower than the chain head's tick."""


class LedgerFormatError(LedgerError):
    """Malformed or integrity-failing ledger file; carries a byte/line offset."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class RegistryError(Exception):
    pass


class UnknownOwnerError(RegistryError):
    pass


class UnknownRoleError(RegistryError):
    pass


class UnknownAgentError(RegistryError):
    pass


class DuplicateAgentError(RegistryError):
    pass


class SpawnNotPermittedError(RegistryError):
    pass


class EntryKind(IntEnum):
    REGISTER = 1
    SPAWN = 2
    MESSAGE = 3
    TRANSFER = 4
    TASK_POSTED = 5
    TASK_ACCEPTED = 6
    TASK_DELIVERED = 7
    VERDICT = 8
    SETTLE = 9
    FORFEIT = 10
    INGEST = 11
    BREAKER = 12
    INTERVENTION = 13
    HALT = 14
    RESUME = 15
    FLAG = 16


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    tick: int
    kind: EntryKind
    actor: bytes
    payload: bytes
    prev_hash: bytes
    hash: bytes

    def fields(self) -> dict[str, Any]:
        """Decode the payload back to a mapping (tooling/forensics view)."""
        return codec.decode_payload(self.payload)


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    first_bad_seq: Optional[int] = None
    length: int = 0


class LedgerChain:
    """Append-only hash chain with a configuration-bound genesis digest."""

    def __init__(self, genesis: bytes, hash_name: str = "sha256") -> None:
        if len(genesis) != hashlib.new(hash_name).digest_size:
            raise LedgerError("genesis digest size does not match hash function")
        self.genesis = genesis
        self.hash_name = hash_name
        self._entries: list[LedgerEntry] = []

    @classmethod
    def from_config_bytes(cls, config_bytes: bytes, hash_name: str = "sha256") -> "LedgerChain":
        return cls(codec.digest(hash_name, config_bytes), hash_name)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self._entries)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def entry(self, seq: int) -> LedgerEntry:
        if not 0 <= seq < len(self._entries):
            raise LedgerError(f"no entry with seq {seq}")
        return self._entries[seq]

    @property
    def head_hash(self) -> bytes:
        return self._entries[-1].hash if self._entries else self.genesis

    @property
    def head_tick(self) -> int:
        return self._entries[-1].tick if self._entries else 0

    def append(self, kind: EntryKind, actor: bytes, payload: Mapping[str, Any], tick: int) -> LedgerEntry:
        if self._entries and tick < self._entries[-1].tick:
            raise TimeRegressionError(
                f"tick {tick} precedes chain head tick {self._entries[-1].tick}"
            )
        seq = len(self._entries)
        raw = codec.encode_payload(payload)
        prev = self.head_hash
        body = codec.entry_body(seq, tick, int(kind), actor, raw)
        entry = LedgerEntry(
            seq=seq,
            tick=tick,
            kind=EntryKind(kind),
            actor=actor,
            payload=raw,
            prev_hash=prev,
            hash=codec.chain_hash(self.hash_name, prev, body),
        )
        self._entries.append(entry)
        return entry

    def verify(self) -> VerifyReport:
        return verify_entries(self.genesis, self._entries, self.hash_name)

    # -- serialization ----------------------------------------------------

    _MAGIC = b"AGLD"
    _VERSION = 1

    def export_binary(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(self._VERSION.to_bytes(2, "big"))
            name = self.hash_name.encode("ascii")
            fh.write(len(name).to_bytes(1, "big"))
            fh.write(name)
            fh.write(self.genesis)
            for e in self._entries:
                record = (
                    e.seq.to_bytes(8, "big")
                    + e.tick.to_bytes(8, "big")
                    + int(e.kind).to_bytes(1, "big")
                    + e.actor
                    + len(e.payload).to_bytes(4, "big")
                    + e.payload
                    + e.prev_hash
                    + e.hash
                )
                fh.write(len(record).to_bytes(4, "big"))
                fh.write(record)

    @classmethod
    def import_binary(cls, path: str, verify: bool = True) -> "LedgerChain":
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise LedgerFormatError(f"truncated while reading {what}", pos)
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        if take(4, "magic") != cls._MAGIC:
            raise LedgerFormatError("bad magic", 0)
        version = int.from_bytes(take(2, "version"), "big")
        if version != cls._VERSION:
            raise LedgerFormatError(f"unsupported version {version}", 4)
        name_len = take(1, "hash name length")[0]
        hash_name = take(name_len, "hash name").decode("ascii")
        digest_size = hashlib.new(hash_name).digest_size
        genesis = take(digest_size, "genesis digest")
        chain = cls(genesis, hash_name)
        prev = genesis
        last_tick: Optional[int] = None
        while pos < len(data):
            record_start = pos
            rec_len = int.from_bytes(take(4, "record length"), "big")
            rec = take(rec_len, "record")
            try:
                entry = _parse_record(rec, digest_size)
            except LedgerFormatError as exc:
                raise LedgerFormatError(str(exc).rsplit(" (offset", 1)[0], record_start + 4 + exc.offset) from None
            if verify and not _entry_valid(entry, len(chain._entries), prev, last_tick, hash_name):
                raise LedgerFormatError(f"integrity failure at seq {entry.seq}", record_start)
            chain._entries.append(entry)
            prev = entry.hash
            last_tick = entry.tick
        return chain

    def export_text(self, path: str) -> None:
        """Lossless line-delimited export: one entry per line, hex digests."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# agorasim-ledger v{self._VERSION} {self.hash_name} {self.genesis.hex()}\n")
            for e in self._entries:
                fh.write(
                    f"{e.seq} {e.tick} {int(e.kind)} {e.actor.hex()} "
                    f"{e.payload.hex()} {e.prev_hash.hex()} {e.hash.hex()}\n"
                )

    @classmethod
    def import_text(cls, path: str, verify: bool = True) -> "LedgerChain":
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith("# agorasim-ledger "):
            raise LedgerFormatError("missing header line", 0)
        try:
            _, _, version_tag, hash_name, genesis_hex = lines[0].split(" ")
            genesis = bytes.fromhex(genesis_hex)
        except ValueError:
            raise LedgerFormatError("malformed header line", 0) from None
        if version_tag != f"v{cls._VERSION}":
            raise LedgerFormatError(f"unsupported version {version_tag}", 0)
        chain = cls(genesis, hash_name)
        prev = genesis
        last_tick: Optional[int] = None
        for lineno, line in enumerate(lines[1:], start=1):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 7:
                raise LedgerFormatError("expected 7 fields", lineno)
            try:
                entry = LedgerEntry(
                    seq=int(parts[0]),
                    tick=int(parts[1]),
                    kind=EntryKind(int(parts[2])),
                    actor=bytes.fromhex(parts[3]),
                    payload=bytes.fromhex(parts[4]),
                    prev_hash=bytes.fromhex(parts[5]),
                    hash=bytes.fromhex(parts[6]),
                )
            except (ValueError, KeyError):
                raise LedgerFormatError("unparseable entry fields", lineno) from None
            if verify and not _entry_valid(entry, len(chain._entries), prev, last_tick, hash_name):
                raise LedgerFormatError(f"integrity failure at seq {entry.seq}", lineno)
            chain._entries.append(entry)
            prev = entry.hash
            last_tick = entry.tick
        return chain


def _parse_record(rec: bytes, digest_size: int) -> LedgerEntry:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(rec):
            raise LedgerFormatError(f"truncated record while reading {what}", pos)
        chunk = rec[pos : pos + n]
        pos += n
        return chunk

    seq = int.from_bytes(take(8, "seq"), "big")
    tick = int.from_bytes(take(8, "tick"), "big")
    kind_raw = take(1, "kind")[0]
    try:
        kind = EntryKind(kind_raw)
    except ValueError:
        raise LedgerFormatError(f"unknown entry kind {kind_raw}", pos - 1) from None
    actor = take(32, "actor")
    payload_len = int.from_bytes(take(4, "payload length"), "big")
    payload = take(payload_len, "payload")
    prev_hash = take(digest_size, "prev hash")
    digest_value = take(digest_size, "hash")
    if pos != len(rec):
        raise LedgerFormatError("trailing bytes in record", pos)
    return LedgerEntry(seq, tick, kind, actor, payload, prev_hash, digest_value)


def _entry_valid(e: LedgerEntry, index: int, prev: bytes, last_tick: Optional[int], hash_name: str) -> bool:
    body = codec.entry_body(e.seq, e.tick, int(e.kind), e.actor, e.payload)
    return (
        e.seq == index
        and e.prev_hash == prev
        and e.hash == codec.chain_hash(hash_name, prev, body)
        and (last_tick is None or e.tick >= last_tick)
    )


def verify_entries(genesis: bytes, entries: Iterable[LedgerEntry], hash_name: str = "sha256") -> VerifyReport:
    """Recompute every chained hash; report the smallest failing seq."""
    prev = genesis
    count = 0
    last_tick: Optional[int] = None
    for i, e in enumerate(entries):
        count += 1
        if not _entry_valid(e, i, prev, last_tick, hash_name):
            return VerifyReport(ok=False, first_bad_seq=i, length=count)
        prev = e.hash
        last_tick = e.tick
    return VerifyReport(ok=True, first_bad_seq=None, length=count)


def replay(genesis: bytes, bodies: Iterable[tuple[EntryKind, bytes, Mapping[str, Any], int]],
           hash_name: str = "sha256") -> LedgerChain:
    """Apply the same entry-body sequence to a fresh chain (determinism check)."""
    chain = LedgerChain(genesis, hash_name)
    for kind, actor, payload, tick in bodies:
        chain.append(kind, actor, payload, tick)
    return chain


# ---------------------------------------------------------------------------
# Identity registry
# ---------------------------------------------------------------------------


class AgentState(Enum):
    ACTIVE = "active"
    RATE_LIMITED = "rate-limited"
    QUARANTINED = "quarantined"
    HALTED = "halted"
    REVOKED = "revoked"


# Lifecycle states that may spawn children. Rate limits constrain message
# volume, not lifecycle authority.
SPAWN_PERMITTED = frozenset({AgentState.ACTIVE, AgentState.RATE_LIMITED})


@dataclass
class AgentRecord:
    agent_id: bytes
    owner_id: str
    parent: Optional[bytes]
    roles: frozenset[str]
    robustness_certified: bool
    recertified_tick: int
    capabilities: frozenset[str]
    sub_market: str
    state: AgentState = AgentState.ACTIVE
    registered_tick: int = 0

    @property
    def agent_hex(self) -> str:
        return self.agent_id.hex()


def fingerprint(public_key: bytes, hash_name: str = "sha256") -> bytes:
    return codec.digest(hash_name, public_key)


class IdentityRegistry:
    """Agent directory bound to the chain: registrations, lineage, lifecycle."""

    def __init__(self, chain: LedgerChain, role_names: Iterable[str]) -> None:
        self.chain = chain
        self.role_names = frozenset(role_names)
        self.owners: set[str] = set()
        self.agents: dict[bytes, AgentRecord] = {}
        self.revoked: set[bytes] = set()

    def register_owner(self, owner_id: str) -> None:
        self.owners.add(owner_id)

    def get(self, agent_id: bytes) -> AgentRecord:
        try:
            return self.agents[agent_id]
        except KeyError:
            raise UnknownAgentError(f"unknown agent {agent_id.hex()[:12]}") from None

    def register_agent(
        self,
        public_key: bytes,
        owner_id: Optional[str],
        roles: Iterable[str],
        capabilities: Iterable[str],
        sub_market: str,
        tick: int,
        parent: Optional[bytes] = None,
        robustness_certified: bool = False,
    ) -> AgentRecord:
        roles = frozenset(roles)
        unknown = roles - self.role_names
        if unknown:
            raise UnknownRoleError(f"roles not in catalogue: {sorted(unknown)}")
        agent_id = fingerprint(public_key, self.chain.hash_name)
        if agent_id in self.agents or agent_id in self.revoked:
            raise DuplicateAgentError(f"agent {agent_id.hex()[:12]} already registered")
        if parent is not None:
            parent_rec = self.get(parent)
            if parent_rec.state not in SPAWN_PERMITTED:
                raise SpawnNotPermittedError(
                    f"parent in state {parent_rec.state.value} may not spawn"
                )
            # Ownership is transitive along spawn lineage.
            owner_id = parent_rec.owner_id
        else:
            if owner_id is None or owner_id not in self.owners:
                raise UnknownOwnerError(f"unknown owner {owner_id!r}")
        record = AgentRecord(
            agent_id=agent_id,
            owner_id=owner_id,
            parent=parent,
            roles=roles,
            robustness_certified=robustness_certified,
            recertified_tick=tick,
            capabilities=frozenset(capabilities),
            sub_market=sub_market,
            registered_tick=tick,
        )
        self.agents[agent_id] = record
        payload = {
            "agent": agent_id,
            "owner": record.owner_id,
            "roles": sorted(roles),
            "capabilities": sorted(record.capabilities),
            "sub_market": sub_market,
            "certified": robustness_certified,
        }
        if parent is not None:
            payload["parent"] = parent
            self.chain.append(EntryKind.SPAWN, parent, payload, tick)
        else:
            self.chain.append(EntryKind.REGISTER, agent_id, payload, tick)
        return record

    def ownership_chain(self, agent_id: bytes) -> tuple[list[bytes], str]:
        """Walk parent links to the root; returns (ids root-last, owner)."""
        record = self.get(agent_id)
        chain_ids = [agent_id]
        seen = {agent_id}
        while record.parent is not None:
            parent_id = record.parent
            if parent_id in seen:
                raise RegistryError("cycle in parent links")
            seen.add(parent_id)
            record = self.get(parent_id)
            chain_ids.append(parent_id)
        return chain_ids, record.owner_id

    def descendants(self, agent_id: bytes) -> set[bytes]:
        """All transitively spawned children of the given agent."""
        children: dict[bytes, list[bytes]] = {}
        for rec in self.agents.values():
            if rec.parent is not None:
                children.setdefault(rec.parent, []).append(rec.agent_id)
        out: set[bytes] = set()
        stack = [agent_id]
        while stack:
            node = stack.pop()
            for child in children.get(node, ()):
                if child not in out:
                    out.add(child)
                    stack.append(child)
        return out

    def set_state(self, agent_id: bytes, state: AgentState) -> None:
        record = self.get(agent_id)
        if record.state is AgentState.REVOKED and state is not AgentState.REVOKED:
            raise RegistryError("revoked agents never return to service")
        record.state = state
        if state is AgentState.REVOKED:
            self.revoked.add(agent_id)

    def active_ids(self) -> list[bytes]:
        return sorted(a for a, r in self.agents.items() if r.state is AgentState.ACTIVE)
