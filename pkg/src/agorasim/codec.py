"""Canonical byte encoding for ledger payloads and entry bodies.

Every value that ends up under a chain hash goes through this module so
that replaying the same logical events always reproduces the same bytes:
fixed type tags, big-endian fixed-width integers, length-prefixed strings,
map keys sorted bytewise. Floats are rejected outright; money and scores
must be carried as integer micro-units.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Mapping

TAG_NONE = 0x00
TAG_INT = 0x01
TAG_STR = 0x02
TAG_BYTES = 0x03
TAG_BOOL = 0x04
TAG_LIST = 0x05
TAG_MAP = 0x06

_INT64_MIN = -(1 << 63)
_INT64_MAX = (1 << 63) - 1


class CodecError(ValueError):
    """Raised on unencodable values or malformed canonical bytes."""


def _encode_value(value: Any, out: bytearray) -> None:
    # bool is an int subclass; test it first.
    if value is None:
        out.append(TAG_NONE)
    elif isinstance(value, bool):
        out.append(TAG_BOOL)
        out.append(1 if value else 0)
    elif isinstance(value, int):
        if not (_INT64_MIN <= value <= _INT64_MAX):
            raise CodecError(f"integer out of 64-bit range: {value}")
        out.append(TAG_INT)
        out += value.to_bytes(8, "big", signed=True)
    elif isinstance(value, float):
        raise CodecError("floats are not permitted in canonical payloads")
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(TAG_STR)
        out += len(raw).to_bytes(4, "big")
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out.append(TAG_BYTES)
        out += len(value).to_bytes(4, "big")
        out += bytes(value)
    elif isinstance(value, (list, tuple)):
        out.append(TAG_LIST)
        out += len(value).to_bytes(4, "big")
        for item in value:
            _encode_value(item, out)
    elif isinstance(value, Mapping):
        items = sorted(value.items(), key=lambda kv: kv[0].encode("utf-8"))
        out.append(TAG_MAP)
        out += len(items).to_bytes(4, "big")
        for key, item in items:
            if not isinstance(key, str):
                raise CodecError(f"map keys must be str, got {type(key).__name__}")
            raw = key.encode("utf-8")
            out += len(raw).to_bytes(4, "big")
            out += raw
            _encode_value(item, out)
    else:
        raise CodecError(f"unencodable type: {type(value).__name__}")


def encode_payload(payload: Mapping[str, Any]) -> bytes:
    """Encode a payload mapping to canonical bytes."""
    if not isinstance(payload, Mapping):
        raise CodecError("payload must be a mapping")
    out = bytearray()
    _encode_value(payload, out)
    return bytes(out)


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CodecError(f"truncated canonical bytes at offset {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")


def _decode_value(r: _Reader) -> Any:
    tag = r.u8()
    if tag == TAG_NONE:
        return None
    if tag == TAG_BOOL:
        return r.u8() != 0
    if tag == TAG_INT:
        return int.from_bytes(r.take(8), "big", signed=True)
    if tag == TAG_STR:
        return r.take(r.u32()).decode("utf-8")
    if tag == TAG_BYTES:
        return r.take(r.u32())
    if tag == TAG_LIST:
        return [_decode_value(r) for _ in range(r.u32())]
    if tag == TAG_MAP:
        count = r.u32()
        out = {}
        for _ in range(count):
            key = r.take(r.u32()).decode("utf-8")
            out[key] = _decode_value(r)
        return out
    raise CodecError(f"unknown type tag 0x{tag:02x} at offset {r.pos - 1}")


def decode_payload(data: bytes) -> dict[str, Any]:
    """Decode canonical bytes back to a payload mapping."""
    r = _Reader(data)
    value = _decode_value(r)
    if r.pos != len(data):
        raise CodecError(f"trailing bytes after payload at offset {r.pos}")
    if not isinstance(value, dict):
        raise CodecError("top-level payload must be a map")
    return value


def entry_body(seq: int, tick: int, kind: int, actor: bytes, payload: bytes) -> bytes:
    """Fixed-layout body bytes that get chained under the entry hash."""
    if len(actor) != 32:
        raise CodecError(f"actor must be 32 bytes, got {len(actor)}")
    out = bytearray()
    out += seq.to_bytes(8, "big")
    out += tick.to_bytes(8, "big")
    out.append(kind)
    out += actor
    out += len(payload).to_bytes(4, "big")
    out += payload
    return bytes(out)


def chain_hash(hash_name: str, prev_hash: bytes, body: bytes) -> bytes:
    h = hashlib.new(hash_name)
    h.update(prev_hash)
    h.update(body)
    return h.digest()


def digest(hash_name: str, data: bytes) -> bytes:
    h = hashlib.new(hash_name)
    h.update(data)
    return h.digest()


def canonical_json_bytes(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, no whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
