"""Codec tests: roundtrip identity, mandatory-field rules, malformed frames,
and a header-mutation fuzz over a reference corpus."""

import random

import pytest

from iotmp.errors import InvalidKindBody, MalformedFrame
from iotmp.model import (
    FrameDecoder,
    KINDS,
    ProtocolMessage,
    SemanticLocation,
    attr,
    decode_message,
    encode_message,
)

LOC = SemanticLocation(("AU", "NSW", "Sydney"), -33.87, 151.21)


def test_update_roundtrip():
    msg = ProtocolMessage("UPDATE", 3, "mt-1", mtid="mt-1", body=[attr("Temperature", 21.5, ts=1000)])
    assert decode_message(encode_message(msg)) == msg


def test_get_with_empty_body_roundtrips():
    msg = ProtocolMessage("GET", 9, "M1", mtid="mt-1")
    assert decode_message(encode_message(msg)) == msg


def test_alert_missing_mtid_rejected():
    msg = ProtocolMessage("ALERT", 1, "mt-1", body=[attr("Temperature", 40)])
    with pytest.raises(InvalidKindBody):
        encode_message(msg)


def test_update_without_body_rejected():
    with pytest.raises(InvalidKindBody):
        encode_message(ProtocolMessage("UPDATE", 1, "mt-1", mtid="mt-1"))


def test_associate_req_must_not_carry_mtid():
    with pytest.raises(InvalidKindBody):
        encode_message(ProtocolMessage("ASSOCIATE-REQ", 1, "agent-1", mtid="mt-1"))


def test_empty_bytes_rejected():
    with pytest.raises(MalformedFrame):
        decode_message(b"")


def test_trailing_bytes_rejected():
    frame = encode_message(ProtocolMessage("GET", 1, "M1", mtid="mt-1"))
    with pytest.raises(MalformedFrame):
        decode_message(frame + b"x")


def test_unknown_kind_rejected():
    msg = ProtocolMessage("NOPE", 1, "M1", mtid="mt-1")
    with pytest.raises(InvalidKindBody):
        encode_message(msg)


def test_location_value_roundtrips():
    msg = ProtocolMessage("UPDATE", 7, "mt-1", mtid="mt-1", body=[attr("MobileLocation", LOC, ts=5)])
    out = decode_message(encode_message(msg))
    assert out.body[0]["value"] == LOC


def _random_message(rng: random.Random) -> ProtocolMessage:
    kind = rng.choice(sorted(KINDS))
    sender = rng.choice(["mt-1", "agent_7", "M1", "bridge-2"])
    mtid = None if kind in ("ASSOCIATE-REQ", "ASSOCIATE-RESP") else rng.choice(["mt-1", "thing-42"])
    body = []
    for i in range(rng.randint(0, 4)):
        value = rng.choice([rng.randint(-50, 50), rng.random() * 100, "open", True, None, LOC])
        entry = attr(f"Attr{i}", value)
        if rng.random() < 0.5:
            entry["ts"] = rng.randint(0, 10**12)
        body.append(entry)
    if kind in ("UPDATE", "SET", "ALERT") and not body:
        body = [attr("Temperature", 1)]
    return ProtocolMessage(kind, rng.randint(0, 2**31), sender, mtid=mtid, body=body)


def test_roundtrip_property_over_generated_messages():
    rng = random.Random(1234)
    for _ in range(500):
        msg = _random_message(rng)
        assert decode_message(encode_message(msg)) == msg


def test_header_mutation_fuzz_never_panics():
    # Every single-byte mutation of the length header must fail decode or
    # decode to a different message; never crash with a non-domain error.
    rng = random.Random(99)
    corpus = [encode_message(_random_message(rng)) for _ in range(1000)]
    for frame in corpus:
        original = decode_message(frame)
        pos = rng.randrange(4)
        flip = rng.randrange(1, 256)
        mutated = bytearray(frame)
        mutated[pos] ^= flip
        try:
            out = decode_message(bytes(mutated))
        except MalformedFrame:
            continue
        assert out != original


def test_body_mutation_fuzz_never_panics():
    rng = random.Random(7)
    corpus = [encode_message(_random_message(rng)) for _ in range(300)]
    for frame in corpus:
        original = decode_message(frame)
        pos = rng.randrange(4, len(frame))
        mutated = bytearray(frame)
        mutated[pos] ^= rng.randrange(1, 256)
        try:
            out = decode_message(bytes(mutated))
        except MalformedFrame:
            continue
        assert isinstance(out, ProtocolMessage)


class TestFrameDecoder:
    def test_single_frame(self):
        msg = ProtocolMessage("GET", 1, "M1", mtid="mt-1")
        assert FrameDecoder().feed(encode_message(msg)) == [msg]

    def test_split_delivery(self):
        msg = ProtocolMessage("UPDATE", 2, "mt-1", mtid="mt-1", body=[attr("Sound", 3)])
        frame = encode_message(msg)
        dec = FrameDecoder()
        assert dec.feed(frame[:3]) == []
        assert dec.feed(frame[3:10]) == []
        assert dec.feed(frame[10:]) == [msg]

    def test_multiple_frames_one_feed(self):
        m1 = ProtocolMessage("GET", 1, "M1", mtid="mt-1")
        m2 = ProtocolMessage("ACK", 2, "M1", mtid="mt-1")
        dec = FrameDecoder()
        assert dec.feed(encode_message(m1) + encode_message(m2)) == [m1, m2]

    def test_oversize_declaration_rejected(self):
        with pytest.raises(MalformedFrame):
            FrameDecoder().feed(b"\xff\xff\xff\xff")
