"""Canonical agent-protocol message encoding.

Wire format: a 4-byte big-endian length prefix followed by one UTF-8 JSON
object with keys ``v`` (always 1), ``kind``, ``seq``, ``sender``, plus
``mtid`` and ``body`` where the kind requires them. Encoding is canonical
(sorted keys, no whitespace) so identical messages always produce identical
bytes; decoding is strict and rejects anything it would not itself emit,
modulo JSON whitespace.

Body entries are ``{"name": .., "value": ..}`` dicts with an optional
``ts`` (integer epoch seconds). Names starting with ``_`` are protocol-level fields
(status, correlation, error codes) and are never legal attribute names.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from iotmp.errors import InvalidKindBody, MalformedFrame
from iotmp.model.identifiers import is_identifier
from iotmp.model.location import SemanticLocation

KINDS = frozenset({
    "DIRECT-JOIN",
    "ASSOCIATE-REQ",
    "ASSOCIATE-RESP",
    "RECONNECT",
    "JOIN-ACK",
    "GET",
    "SET",
    "UPDATE",
    "ALERT",
    "MGMT-GET",
    "ACK",
    "ERROR",
})

# The ASSOCIATE discovery exchange happens before an MT exists, so neither
# direction can carry an mtid.
_NO_MTID_KINDS = frozenset({"ASSOCIATE-REQ", "ASSOCIATE-RESP"})
_BODY_REQUIRED_KINDS = frozenset({"UPDATE", "SET", "ALERT"})

HEADER_SIZE = 4
MAX_FRAME = 1 << 20


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    seq: int
    sender: str
    mtid: str | None = None
    body: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body or ()))

    def body_value(self, name: str, default=None):
        for entry in self.body:
            if entry.get("name") == name:
                return entry.get("value", default)
        return default


def attr(name: str, value, ts: int | None = None) -> dict:
    """Build one body entry."""
    entry = {"name": name, "value": value}
    if ts is not None:
        entry["ts"] = int(ts)
    return entry


def body_get(body, name: str, default=None):
    for entry in body or ():
        if entry.get("name") == name:
            return entry.get("value", default)
    return default


def validate_message(msg: ProtocolMessage) -> ProtocolMessage:
    """Enforce the kind/field rules; raise :class:`InvalidKindBody`."""
    if msg.kind not in KINDS:
        raise InvalidKindBody(f"unknown kind {msg.kind!r}")
    if not isinstance(msg.seq, int) or isinstance(msg.seq, bool) or msg.seq < 0:
        raise InvalidKindBody(f"bad seq {msg.seq!r}")
    if not is_identifier(msg.sender):
        raise InvalidKindBody(f"bad sender {msg.sender!r}")
    if msg.kind in _NO_MTID_KINDS:
        if msg.mtid is not None:
            raise InvalidKindBody(f"{msg.kind} must not carry an mtid")
    else:
        if msg.mtid is None:
            raise InvalidKindBody(f"{msg.kind} requires an mtid")
        if not is_identifier(msg.mtid):
            raise InvalidKindBody(f"bad mtid {msg.mtid!r}")
    if msg.kind in _BODY_REQUIRED_KINDS and not msg.body:
        raise InvalidKindBody(f"{msg.kind} requires a body")
    for entry in msg.body:
        _check_body_entry(entry)
    return msg


def _check_body_entry(entry) -> None:
    if not isinstance(entry, dict):
        raise InvalidKindBody(f"body entry is not an object: {entry!r}")
    extra = set(entry) - {"name", "value", "ts"}
    if extra:
        raise InvalidKindBody(f"unknown body entry keys: {sorted(extra)}")
    name = entry.get("name")
    if not isinstance(name, str) or not name:
        raise InvalidKindBody(f"body entry without a name: {entry!r}")
    if "value" not in entry:
        raise InvalidKindBody(f"body entry {name!r} has no value")
    _check_value(name, entry["value"])
    if "ts" in entry and (not isinstance(entry["ts"], int) or isinstance(entry["ts"], bool)):
        raise InvalidKindBody(f"body entry {name!r} has a non-integer ts")


def _check_value(name: str, value) -> None:
    if value is None or isinstance(value, (str, int, float, bool)):
        return
    if isinstance(value, SemanticLocation):
        return
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return
    raise InvalidKindBody(f"body entry {name!r} has unsupported value {value!r}")


def encode_message(msg: ProtocolMessage) -> bytes:
    """Length-prefixed canonical encoding; inverse of :func:`decode_message`."""
    validate_message(msg)
    obj = {"v": 1, "kind": msg.kind, "seq": msg.seq, "sender": msg.sender}
    if msg.mtid is not None:
        obj["mtid"] = msg.mtid
    if msg.body:
        obj["body"] = [_entry_to_json(e) for e in msg.body]
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")
    if len(payload) > MAX_FRAME:
        raise InvalidKindBody(f"frame too large: {len(payload)} bytes")
    return struct.pack(">I", len(payload)) + payload


def _entry_to_json(entry: dict) -> dict:
    out = dict(entry)
    value = out.get("value")
    if isinstance(value, SemanticLocation):
        out["value"] = value.to_json()
    elif isinstance(value, tuple):
        out["value"] = list(value)
    return out


def decode_message(data: bytes) -> ProtocolMessage:
    """Decode exactly one frame; reject truncated, oversize or trailing input."""
    if not isinstance(data, (bytes, bytearray)) or len(data) < HEADER_SIZE:
        raise MalformedFrame("frame shorter than its header")
    (length,) = struct.unpack(">I", bytes(data[:HEADER_SIZE]))
    if length > MAX_FRAME:
        raise MalformedFrame(f"declared frame length {length} exceeds limit")
    if len(data) != HEADER_SIZE + length:
        raise MalformedFrame(f"declared length {length}, got {len(data) - HEADER_SIZE} payload bytes")
    return decode_payload(bytes(data[HEADER_SIZE:]))


def decode_payload(payload: bytes) -> ProtocolMessage:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"undecodable frame body: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedFrame("frame body is not an object")
    extra = set(obj) - {"v", "kind", "seq", "sender", "mtid", "body"}
    if extra:
        raise MalformedFrame(f"unknown frame keys: {sorted(extra)}")
    if obj.get("v") != 1:
        raise MalformedFrame(f"unsupported frame version {obj.get('v')!r}")
    for key in ("kind", "seq", "sender"):
        if key not in obj:
            raise MalformedFrame(f"frame missing {key!r}")
    body = obj.get("body", [])
    if not isinstance(body, list):
        raise MalformedFrame("frame body key must hold a list")
    msg = ProtocolMessage(
        kind=obj["kind"],
        seq=obj["seq"],
        sender=obj["sender"],
        mtid=obj.get("mtid"),
        body=tuple(_entry_from_json(e) for e in body),
    )
    try:
        validate_message(msg)
    except InvalidKindBody as exc:
        raise MalformedFrame(str(exc)) from None
    return msg


def _entry_from_json(entry) -> dict:
    if isinstance(entry, dict) and isinstance(entry.get("value"), dict) and "path" in entry["value"]:
        out = dict(entry)
        try:
            out["value"] = SemanticLocation.from_value(out["value"])
        except (TypeError, KeyError, ValueError) as exc:
            raise MalformedFrame(f"bad location value: {exc}") from None
        return out
    if isinstance(entry, dict) and isinstance(entry.get("value"), list):
        out = dict(entry)
        out["value"] = tuple(out["value"])
        return out
    return entry


class FrameDecoder:
    """Incremental decoder for a framed byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        """Consume bytes, return every complete message now available."""
        self._buf.extend(data)
        messages = []
        while True:
            if len(self._buf) < HEADER_SIZE:
                return messages
            (length,) = struct.unpack(">I", bytes(self._buf[:HEADER_SIZE]))
            if length > MAX_FRAME:
                raise MalformedFrame(f"declared frame length {length} exceeds limit")
            end = HEADER_SIZE + length
            if len(self._buf) < end:
                return messages
            payload = bytes(self._buf[HEADER_SIZE:end])
            del self._buf[:end]
            messages.append(decode_payload(payload))
