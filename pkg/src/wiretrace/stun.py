"""STUN message detection and decoding.

The decoder is deliberately lenient about the magic cookie (proprietary
dialects exist) and strict about the length field, which is what keeps
random UDP traffic such as DNS from being mistaken for STUN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple, Union

from .capture import Endpoint, UdpDatagram
from .errors import NotABindingRequest

MAGIC_COOKIE = 0x2112A442
HEADER_LEN = 20
BINDING_REQUEST = 0x0001
BINDING_SUCCESS = 0x0101


@dataclass(frozen=True)
class StunMessage:
    msg_type: int
    msg_length: int
    magic_cookie_present: bool
    transaction_id: bytes
    attributes: Tuple[Tuple[int, bytes], ...] = ()

    @property
    def method(self) -> int:
        t = self.msg_type
        return (t & 0x000F) | ((t & 0x00E0) >> 1) | ((t & 0x3E00) >> 2)

    @property
    def msg_class(self) -> int:
        t = self.msg_type
        return ((t >> 4) & 0x1) | ((t >> 7) & 0x2)


@dataclass(frozen=True)
class NotStun:
    reason: str


@dataclass(frozen=True)
class BindingEvent:
    ts_ns: int
    src: Endpoint
    dst: Endpoint
    frame_len: int
    stun_length: int
    transaction_id: bytes


def decode_stun(payload: bytes) -> Union[StunMessage, NotStun]:
    """Decode ``payload`` as STUN or say why it is not."""
    n = len(payload)
    if n < HEADER_LEN:
        return NotStun("short")
    if payload[0] & 0xC0:
        return NotStun("type-bits")
    msg_type, msg_length, cookie = struct.unpack_from("!HHI", payload, 0)
    if msg_length % 4 or msg_length + HEADER_LEN != n:
        return NotStun("length")
    has_cookie = cookie == MAGIC_COOKIE
    # without the cookie the whole 16 bytes after length act as the id
    txid = bytes(payload[8:20]) if has_cookie else bytes(payload[4:20])

    attrs: List[Tuple[int, bytes]] = []
    pos = HEADER_LEN
    while pos < n:
        if pos + 4 > n:
            return NotStun("attribute-header")
        a_type, a_len = struct.unpack_from("!HH", payload, pos)
        value_end = pos + 4 + a_len
        padded_end = pos + 4 + ((a_len + 3) & ~3)
        if padded_end > n:
            return NotStun("attribute-overrun")
        attrs.append((a_type, bytes(payload[pos + 4 : value_end])))
        pos = padded_end
    return StunMessage(msg_type, msg_length, has_cookie, txid, tuple(attrs))


def encode_stun(msg: StunMessage) -> bytes:
    """Serialize a message; attribute padding is written as zero bytes."""
    body = bytearray()
    for a_type, value in msg.attributes:
        body += struct.pack("!HH", a_type, len(value)) + value
        body += b"\x00" * (-len(value) % 4)
    if msg.magic_cookie_present:
        head = struct.pack("!HHI", msg.msg_type, len(body), MAGIC_COOKIE)
        txid = msg.transaction_id.rjust(12, b"\x00")[:12]
    else:
        head = struct.pack("!HH", msg.msg_type, len(body))
        txid = msg.transaction_id.rjust(16, b"\x00")[:16]
    return head + txid + bytes(body)


def is_binding_request(msg: StunMessage) -> bool:
    return msg.msg_type == BINDING_REQUEST


def to_binding_event(datagram: UdpDatagram, msg: StunMessage) -> BindingEvent:
    if not is_binding_request(msg):
        raise NotABindingRequest(f"message type 0x{msg.msg_type:04x}")
    return BindingEvent(
        ts_ns=datagram.ts_ns,
        src=datagram.src,
        dst=datagram.dst,
        frame_len=datagram.frame_len,
        stun_length=msg.msg_length,
        transaction_id=msg.transaction_id,
    )
