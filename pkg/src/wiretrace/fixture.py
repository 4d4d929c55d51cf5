"""Synthesize capture files from scripted events.

Used by the test-suite and the demo scripts. The canonical fixture
reproduces the four-packet call trace: 86-byte Ethernet frames from
192.168.2.2 to 62.140.137.15. The UDP ports (45000 -> 3478) are chosen
here; the original trace does not show them.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

from .capture import (
    LINKTYPE_ETHERNET,
    LINKTYPE_LINUX_SLL,
    LINKTYPE_RAW,
    CaptureMeta,
    Endpoint,
    PacketRecord,
    write_capture_header,
    write_record,
)
from .errors import SpecInvalid
from .stun import BINDING_REQUEST, StunMessage, encode_stun
from .timefmt import NS, parse_seconds

TRACE_SRC = "192.168.2.2:45000"
TRACE_DST = "62.140.137.15:3478"
TRACE_TIMES = ("23.990789", "24.596166", "25.205671", "25.808196")
# 12-byte USERNAME + 4-byte PRIORITY: 24 attribute bytes -> 86-byte frame
TRACE_ATTRS = ((0x0006, b"call:fixture"), (0x0024, b"\x6e\x7f\x1e\xff"))

_SRC_MAC = bytes.fromhex("02000000aa01")
_DST_MAC = bytes.fromhex("02000000bb02")


@dataclass(frozen=True)
class FixtureEvent:
    ts: Union[str, int]  # seconds as decimal text, or integer nanoseconds
    src: str
    dst: str
    stun_type: int = BINDING_REQUEST
    attrs: Tuple[Tuple[int, bytes], ...] = ()
    cookie: bool = True
    payload: Optional[bytes] = None  # raw UDP payload instead of STUN
    transaction_id: Optional[bytes] = None

    @property
    def ts_ns(self) -> int:
        return self.ts if isinstance(self.ts, int) else parse_seconds(self.ts)


@dataclass(frozen=True)
class FixtureSpec:
    events: Sequence[FixtureEvent] = ()
    link_type: int = LINKTYPE_ETHERNET
    byte_order: str = "little"
    ts_resolution: str = "microsecond"
    snap_len: int = 65535
    vlan_tags: int = 0


def trace_spec(**overrides) -> FixtureSpec:
    events = tuple(FixtureEvent(t, TRACE_SRC, TRACE_DST, attrs=TRACE_ATTRS) for t in TRACE_TIMES)
    return FixtureSpec(events=events, **overrides)


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def _ip_udp(src: Endpoint, dst: Endpoint, payload: bytes, ident: int) -> bytes:
    udp_len = 8 + len(payload)
    if src.ip.version == 4:
        hdr = struct.pack(
            "!BBHHHBBH4s4s", 0x45, 0, 20 + udp_len, ident & 0xFFFF, 0x4000, 64, 17, 0,
            src.ip.packed, dst.ip.packed,
        )
        hdr = hdr[:10] + struct.pack("!H", _checksum(hdr)) + hdr[12:]
        return hdr + struct.pack("!HHHH", src.port, dst.port, udp_len, 0) + payload
    pseudo = src.ip.packed + dst.ip.packed + struct.pack("!I3xB", udp_len, 17)
    udp = struct.pack("!HHHH", src.port, dst.port, udp_len, 0) + payload
    csum = _checksum(pseudo + udp) or 0xFFFF
    udp = udp[:6] + struct.pack("!H", csum) + udp[8:]
    hdr = struct.pack("!IHBB16s16s", 6 << 28, udp_len, 17, 64, src.ip.packed, dst.ip.packed)
    return hdr + udp


def _frame(ip_packet: bytes, version: int, spec: FixtureSpec) -> bytes:
    ethertype = 0x0800 if version == 4 else 0x86DD
    if spec.link_type == LINKTYPE_ETHERNET:
        # each 802.1Q tag: TPID + TCI, then the real EtherType follows
        tags = b"".join(struct.pack("!HH", 0x8100, 100 + i) for i in range(spec.vlan_tags))
        return _DST_MAC + _SRC_MAC + tags + struct.pack("!H", ethertype) + ip_packet
    if spec.link_type == LINKTYPE_LINUX_SLL:
        return struct.pack("!HHH", 4, 1, 6) + _SRC_MAC + b"\x00\x00" + struct.pack("!H", ethertype) + ip_packet
    if spec.link_type == LINKTYPE_RAW:
        return ip_packet
    raise SpecInvalid(f"fixture writer does not support link type {spec.link_type}")


def _endpoint(text: str) -> Endpoint:
    try:
        ep = Endpoint.parse(text)
    except ValueError as exc:
        raise SpecInvalid(f"bad endpoint {text!r}: {exc}") from None
    if not 0 <= ep.port <= 0xFFFF:
        raise SpecInvalid(f"port out of range in {text!r}")
    return ep


def build_records(spec: FixtureSpec) -> Tuple[CaptureMeta, list]:
    if spec.byte_order not in ("big", "little") or spec.ts_resolution not in ("microsecond", "nanosecond"):
        raise SpecInvalid("byte_order / ts_resolution invalid")
    if not 0 <= spec.vlan_tags <= 2:
        raise SpecInvalid("at most two VLAN tags")
    meta = CaptureMeta(spec.byte_order, spec.ts_resolution, spec.link_type, spec.snap_len)
    unit = meta.frac_ns
    records = []
    for i, ev in enumerate(spec.events):
        src, dst = _endpoint(ev.src), _endpoint(ev.dst)
        if src.ip.version != dst.ip.version:
            raise SpecInvalid(f"event {i}: mixed IP versions")
        try:
            ts = ev.ts_ns
        except ValueError as exc:
            raise SpecInvalid(f"event {i}: bad timestamp {ev.ts!r}") from exc
        if ts < 0 or ts % unit:
            raise SpecInvalid(f"event {i}: timestamp not representable at {spec.ts_resolution} resolution")
        if ev.payload is not None:
            payload = ev.payload
        else:
            if not 0 <= ev.stun_type <= 0x3FFF:
                raise SpecInvalid(f"event {i}: STUN type out of range")
            txid = ev.transaction_id or hashlib.sha256(f"txid-{i}".encode()).digest()[: 12 if ev.cookie else 16]
            payload = encode_stun(StunMessage(ev.stun_type, 0, ev.cookie, txid, tuple(ev.attrs)))
        frame = _frame(_ip_udp(src, dst, payload, i), src.ip.version, spec)
        if len(frame) > spec.snap_len:
            raise SpecInvalid(f"event {i}: frame of {len(frame)} bytes exceeds snap_len")
        sec, frac = divmod(ts, NS)
        if sec > 0xFFFFFFFF:
            raise SpecInvalid(f"event {i}: timestamp beyond capture format range")
        records.append(PacketRecord(sec, frac // unit, len(frame), frame, unit))
    return meta, records


def gen_fixture(spec: FixtureSpec) -> bytes:
    """Capture-file bytes for ``spec``."""
    meta, records = build_records(spec)
    return write_capture_header(meta) + b"".join(write_record(r, meta) for r in records)
