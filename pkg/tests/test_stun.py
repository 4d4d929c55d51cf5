import struct
import tracemalloc

import dpkt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiretrace.capture import Endpoint, UdpDatagram
from wiretrace.errors import NotABindingRequest
from wiretrace.fixture import TRACE_ATTRS
from wiretrace.stun import (
    MAGIC_COOKIE,
    NotStun,
    StunMessage,
    decode_stun,
    encode_stun,
    is_binding_request,
    to_binding_event,
)

TXID = bytes(range(12))


def _trace_payload():
    return encode_stun(StunMessage(0x0001, 0, True, TXID, TRACE_ATTRS))


def test_trace_payload_decodes():
    payload = _trace_payload()
    assert len(payload) == 44
    msg = decode_stun(payload)
    assert msg.msg_type == 0x0001
    assert msg.msg_length == 24
    assert msg.magic_cookie_present
    assert msg.transaction_id == TXID
    ref = dpkt.stun.STUN(payload)
    assert (ref.type, ref.len) == (msg.msg_type, msg.msg_length)


def test_short_payload():
    assert isinstance(decode_stun(b"\x00" * 10), NotStun)


def test_top_bits_set():
    payload = bytearray(_trace_payload())
    payload[0] = 0xC0
    assert decode_stun(bytes(payload)) == NotStun("type-bits")


def test_length_mismatch_rejected():
    payload = _trace_payload() + b"\x00\x00\x00\x00"
    assert decode_stun(payload) == NotStun("length")


def test_cookie_absent_still_accepted():
    payload = struct.pack("!HH", 0x0001, 0) + bytes(range(16))
    msg = decode_stun(payload)
    assert not msg.magic_cookie_present
    assert msg.transaction_id == bytes(range(16))


def test_dns_query_not_stun():
    # standard query for example.com
    dns = bytes.fromhex("abcd01000001000000000000076578616d706c6503636f6d0000010001")
    assert isinstance(decode_stun(dns), NotStun)


def test_attribute_overrun_rejected():
    payload = struct.pack("!HHI", 1, 8, MAGIC_COOKIE) + TXID + struct.pack("!HH", 6, 40) + b"abcd"
    assert decode_stun(payload) == NotStun("attribute-overrun")


@pytest.mark.parametrize(
    "msg_type,expected",
    [(0x0001, True), (0x0101, False), (0x0000, False), (0x0111, False), (0x0011, False)],
)
def test_binding_request_classification(msg_type, expected):
    msg = decode_stun(encode_stun(StunMessage(msg_type, 0, True, TXID)))
    assert is_binding_request(msg) is expected
    # reference classifier
    ref = dpkt.stun.STUN(encode_stun(msg))
    assert (ref.type == dpkt.stun.BINDING_REQUEST) is expected


def test_method_and_class_bits():
    msg = StunMessage(0x0101, 0, True, TXID)
    assert msg.method == 1 and msg.msg_class == 0b10


def _dgram(ts_ns):
    return UdpDatagram(
        Endpoint.parse("192.168.2.2:45000"), Endpoint.parse("62.140.137.15:3478"), _trace_payload(), 86, ts_ns
    )


@pytest.mark.parametrize("ts_ns", [23_990_789_000, 24_596_166_000])
def test_binding_event_from_trace_rows(ts_ns):
    d = _dgram(ts_ns)
    ev = to_binding_event(d, decode_stun(d.payload))
    assert ev.ts_ns == ts_ns
    assert str(ev.dst.ip) == "62.140.137.15"
    assert ev.frame_len == 86
    assert ev.stun_length == 24
    assert ev.transaction_id == TXID


def test_binding_event_rejects_response():
    d = _dgram(0)
    with pytest.raises(NotABindingRequest):
        to_binding_event(d, StunMessage(0x0101, 0, True, TXID))


attr = st.tuples(st.integers(0, 0xFFFF), st.binary(max_size=23))


@given(st.integers(0, 0x3FFF), st.booleans(), st.binary(min_size=16, max_size=16), st.lists(attr, max_size=6))
def test_reserialize_roundtrip(msg_type, cookie, txid, attrs):
    txid = txid[:12] if cookie else txid
    payload = encode_stun(StunMessage(msg_type, 0, cookie, txid, tuple(attrs)))
    msg = decode_stun(payload)
    if not cookie and payload[4:8] == struct.pack("!I", MAGIC_COOKIE):
        return
    assert isinstance(msg, StunMessage)
    assert msg.msg_type == msg_type
    assert list(msg.attributes) == attrs
    assert encode_stun(msg) == payload


@settings(max_examples=500)
@given(st.binary(max_size=300))
def test_decode_total(data):
    out = decode_stun(data)
    assert isinstance(out, (StunMessage, NotStun))
    if isinstance(out, StunMessage):
        assert out.msg_length + 20 == len(data)
        assert sum(4 + len(v) for _, v in out.attributes) <= out.msg_length


def test_decode_memory_bounded():
    # a maximal attribute list: every attribute empty
    payload = struct.pack("!HHI", 1, 4000, MAGIC_COOKIE) + TXID + b"\x00\x01\x00\x00" * 1000
    tracemalloc.start()
    msg = decode_stun(payload)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert len(msg.attributes) == 1000
    assert peak < 64 * len(payload) + 65536
