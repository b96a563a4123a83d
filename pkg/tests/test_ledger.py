"""Chain integrity, registry lineage, and serialization round trips."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from agorasim import codec
from agorasim.ledger import (
    AgentState,
    DuplicateAgentError,
    EntryKind,
    IdentityRegistry,
    LedgerChain,
    LedgerEntry,
    LedgerFormatError,
    SpawnNotPermittedError,
    SPAWN_PERMITTED,
    SYSTEM_ACTOR,
    TimeRegressionError,
    UnknownOwnerError,
    UnknownRoleError,
    fingerprint,
    replay,
    verify_entries,
)

GENESIS = codec.digest("sha256", b"test-config")


def make_chain(n=0, start_tick=0):
    chain = LedgerChain(GENESIS)
    for i in range(n):
        chain.append(EntryKind.MESSAGE, SYSTEM_ACTOR, {"i": i}, start_tick + i)
    return chain


class TestAppend:
    def test_first_entry_links_to_genesis(self):
        chain = make_chain()
        entry = chain.append(EntryKind.REGISTER, SYSTEM_ACTOR, {"agent": b"\x01" * 32}, 0)
        assert entry.seq == 0
        assert entry.prev_hash == GENESIS
        assert len(chain) == 1

    def test_equal_ticks_accepted(self):
        chain = make_chain()
        a = chain.append(EntryKind.MESSAGE, SYSTEM_ACTOR, {}, 3)
        b = chain.append(EntryKind.MESSAGE, SYSTEM_ACTOR, {}, 3)
        assert (a.seq, b.seq) == (0, 1)
        assert a.tick == b.tick == 3

    def test_time_regression_rejected_and_nothing_appended(self):
        chain = make_chain()
        chain.append(EntryKind.MESSAGE, SYSTEM_ACTOR, {}, 5)
        with pytest.raises(TimeRegressionError):
            chain.append(EntryKind.MESSAGE, SYSTEM_ACTOR, {}, 2)
        assert len(chain) == 1

    def test_seq_dense_and_hash_chained(self):
        chain = make_chain(10)
        for i, e in enumerate(chain):
            assert e.seq == i
        for prev, cur in zip(chain.entries, chain.entries[1:]):
            assert cur.prev_hash == prev.hash


class TestVerify:
    def test_untampered_chain_ok(self):
        chain = make_chain(1000)
        report = chain.verify()
        assert report.ok and report.first_bad_seq is None

    def test_payload_byte_flip_detected_at_exact_seq(self):
        chain = make_chain(1000)
        entries = list(chain.entries)
        target = entries[412]
        mutated = bytearray(target.payload)
        mutated[0] ^= 0x01
        entries[412] = LedgerEntry(
            target.seq, target.tick, target.kind, target.actor,
            bytes(mutated), target.prev_hash, target.hash,
        )
        report = verify_entries(GENESIS, entries)
        assert not report.ok
        assert report.first_bad_seq == 412

    def test_randomized_single_bit_mutations_all_detected(self):
        # Smaller cousin of the acceptance harness: every single-bit flip
        # in any field of any entry must be caught at that entry's seq.
        chain = make_chain(50)
        rng = random.Random(7)
        for _ in range(100):
            entries = list(chain.entries)
            idx = rng.randrange(len(entries))
            e = entries[idx]
            field = rng.choice(["payload", "actor", "prev_hash", "hash", "tick", "seq"])
            if field in ("payload", "actor", "prev_hash", "hash"):
                raw = bytearray(getattr(e, field))
                raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
                kwargs = {field: bytes(raw)}
            else:
                kwargs = {field: getattr(e, field) + 1}
            entries[idx] = LedgerEntry(**{**e.__dict__, **kwargs})
            report = verify_entries(GENESIS, entries)
            assert not report.ok
            assert report.first_bad_seq == idx

    def test_truncation_leaves_valid_prefix(self):
        chain = make_chain(20)
        report = verify_entries(GENESIS, chain.entries[:-1])
        assert report.ok
        assert report.length == 19


class TestReplay:
    def test_same_bodies_reproduce_head_hash(self):
        chain = make_chain(64, start_tick=3)
        bodies = [(e.kind, e.actor, e.fields(), e.tick) for e in chain]
        again = replay(GENESIS, bodies)
        assert again.head_hash == chain.head_hash

    @given(st.lists(st.integers(min_value=0, max_value=1000), min_size=0, max_size=40))
    @settings(max_examples=30, deadline=None)
    def test_head_hash_pure_function_of_bodies(self, values):
        ticks = sorted(values)
        a = LedgerChain(GENESIS)
        b = LedgerChain(GENESIS)
        for t in ticks:
            a.append(EntryKind.TRANSFER, SYSTEM_ACTOR, {"v": t}, t)
            b.append(EntryKind.TRANSFER, SYSTEM_ACTOR, {"v": t}, t)
        assert a.head_hash == b.head_hash


class TestSerialization:
    def test_binary_round_trip_identical_head(self, tmp_path):
        chain = make_chain(100)
        path = str(tmp_path / "ledger.bin")
        chain.export_binary(path)
        loaded = LedgerChain.import_binary(path)
        assert loaded.head_hash == chain.head_hash
        assert loaded.entries == chain.entries

    def test_text_round_trip_identical_head(self, tmp_path):
        chain = make_chain(100)
        path = str(tmp_path / "ledger.txt")
        chain.export_text(path)
        loaded = LedgerChain.import_text(path)
        assert loaded.head_hash == chain.head_hash

    def test_empty_chain_round_trip(self, tmp_path):
        chain = make_chain(0)
        path = str(tmp_path / "empty.bin")
        chain.export_binary(path)
        loaded = LedgerChain.import_binary(path)
        assert len(loaded) == 0
        assert loaded.head_hash == GENESIS

    def test_corrupted_file_reports_offset(self, tmp_path):
        chain = make_chain(30)
        path = str(tmp_path / "ledger.bin")
        chain.export_binary(path)
        with open(path, "rb") as fh:
            blob = bytearray(fh.read())
        rng = random.Random(11)
        for _ in range(60):
            corrupted = bytearray(blob)
            pos = rng.randrange(len(corrupted))
            corrupted[pos] ^= 1 << rng.randrange(8)
            bad = str(tmp_path / "bad.bin")
            with open(bad, "wb") as fh:
                fh.write(corrupted)
            with pytest.raises(LedgerFormatError) as exc_info:
                LedgerChain.import_binary(bad)
            assert exc_info.value.offset >= 0

    def test_payload_fields_survive_round_trip(self, tmp_path):
        chain = LedgerChain(GENESIS)
        payload = {"a": 1, "b": "text", "c": b"\x00\xff", "d": [1, 2], "e": {"x": True}}
        chain.append(EntryKind.INGEST, SYSTEM_ACTOR, payload, 0)
        path = str(tmp_path / "one.bin")
        chain.export_binary(path)
        loaded = LedgerChain.import_binary(path)
        assert loaded.entries[0].fields() == payload


class TestCodec:
    def test_floats_rejected(self):
        with pytest.raises(codec.CodecError):
            codec.encode_payload({"x": 1.5})

    def test_key_order_irrelevant(self):
        assert codec.encode_payload({"a": 1, "b": 2}) == codec.encode_payload({"b": 2, "a": 1})

    @given(
        st.dictionaries(
            st.text(max_size=8),
            st.recursive(
                st.none() | st.booleans() | st.integers(min_value=-(2**60), max_value=2**60)
                | st.text(max_size=16) | st.binary(max_size=16),
                lambda children: st.lists(children, max_size=4)
                | st.dictionaries(st.text(max_size=4), children, max_size=4),
                max_leaves=12,
            ),
            max_size=6,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_encode_decode_round_trip(self, payload):
        raw = codec.encode_payload(payload)
        decoded = codec.decode_payload(raw)
        # Lists and tuples both decode to lists; normalize before comparing.
        assert decoded == _normalize(payload)


def _normalize(value):
    if isinstance(value, tuple):
        return [_normalize(v) for v in value]
    if isinstance(value, list):
        return [_normalize(v) for v in value]
    if isinstance(value, dict):
        return {k: _normalize(v) for k, v in value.items()}
    if isinstance(value, bytearray):
        return bytes(value)
    return value


ROLES = {"data-analyst", "code-executor", "searcher"}


def make_registry():
    chain = make_chain()
    reg = IdentityRegistry(chain, ROLES)
    reg.register_owner("acme")
    return reg


class TestRegistry:
    def test_register_with_roles(self):
        reg = make_registry()
        rec = reg.register_agent(b"pk-1", "acme", {"data-analyst"}, {"search"}, "main", tick=0)
        assert rec.state is AgentState.ACTIVE
        assert rec.agent_id == fingerprint(b"pk-1")
        assert reg.chain.entries[-1].kind is EntryKind.REGISTER

    def test_unknown_owner_and_role_errors(self):
        reg = make_registry()
        with pytest.raises(UnknownOwnerError):
            reg.register_agent(b"pk", "nobody", {"data-analyst"}, set(), "main", tick=0)
        with pytest.raises(UnknownRoleError):
            reg.register_agent(b"pk", "acme", {"wizard"}, set(), "main", tick=0)

    def test_duplicate_agent_rejected(self):
        reg = make_registry()
        reg.register_agent(b"pk-1", "acme", set(), set(), "main", tick=0)
        with pytest.raises(DuplicateAgentError):
            reg.register_agent(b"pk-1", "acme", set(), set(), "main", tick=0)

    def test_spawn_inherits_owner_and_links_parent(self):
        reg = make_registry()
        parent = reg.register_agent(b"pk-x", "acme", set(), set(), "main", tick=0)
        child = reg.register_agent(b"pk-y", None, set(), set(), "main", tick=1, parent=parent.agent_id)
        assert child.owner_id == "acme"
        assert child.parent == parent.agent_id
        assert reg.chain.entries[-1].kind is EntryKind.SPAWN

    @pytest.mark.parametrize("state", list(AgentState))
    def test_spawn_permission_table(self, state):
        reg = make_registry()
        parent = reg.register_agent(b"pk-x", "acme", set(), set(), "main", tick=0)
        parent.state = state
        reg.revoked.discard(parent.agent_id)
        if state in SPAWN_PERMITTED:
            child = reg.register_agent(b"pk-%s" % state.value.encode(), None, set(), set(), "main",
                                       tick=1, parent=parent.agent_id)
            assert child.owner_id == "acme"
        else:
            with pytest.raises(SpawnNotPermittedError):
                reg.register_agent(b"pk-z", None, set(), set(), "main", tick=1, parent=parent.agent_id)

    def test_ownership_chain_depths(self):
        reg = make_registry()
        a = reg.register_agent(b"pk-a", "acme", set(), set(), "main", tick=0)
        chain_ids, owner = reg.ownership_chain(a.agent_id)
        assert chain_ids == [a.agent_id] and owner == "acme"
        b = reg.register_agent(b"pk-b", None, set(), set(), "main", tick=1, parent=a.agent_id)
        c = reg.register_agent(b"pk-c", None, set(), set(), "main", tick=2, parent=b.agent_id)
        chain_ids, owner = reg.ownership_chain(c.agent_id)
        assert chain_ids == [c.agent_id, b.agent_id, a.agent_id]
        assert owner == "acme"

    def test_chain_resolvable_after_parent_revoked(self):
        reg = make_registry()
        a = reg.register_agent(b"pk-a", "acme", set(), set(), "main", tick=0)
        b = reg.register_agent(b"pk-b", None, set(), set(), "main", tick=1, parent=a.agent_id)
        reg.set_state(a.agent_id, AgentState.REVOKED)
        chain_ids, owner = reg.ownership_chain(b.agent_id)
        assert chain_ids == [b.agent_id, a.agent_id]
        assert owner == "acme"

    def test_revoked_fingerprint_never_reregisters(self):
        reg = make_registry()
        a = reg.register_agent(b"pk-a", "acme", set(), set(), "main", tick=0)
        reg.set_state(a.agent_id, AgentState.REVOKED)
        del reg.agents[a.agent_id]
        with pytest.raises(DuplicateAgentError):
            reg.register_agent(b"pk-a", "acme", set(), set(), "main", tick=1)

    def test_ownership_chain_terminates_within_agent_count(self):
        reg = make_registry()
        prev = reg.register_agent(b"pk-0", "acme", set(), set(), "main", tick=0)
        for i in range(1, 12):
            prev = reg.register_agent(b"pk-%d" % i, None, set(), set(), "main",
                                      tick=i, parent=prev.agent_id)
        chain_ids, _ = reg.ownership_chain(prev.agent_id)
        assert len(chain_ids) <= len(reg.agents)
