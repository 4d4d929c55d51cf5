"""Classic packet-capture file parsing and frame decapsulation down to UDP.

Only the original 24-byte-header capture format is handled. Timestamps are
kept as integer nanoseconds so that values like ``23.990789`` survive
exactly through every later stage.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import BinaryIO, NamedTuple, Optional, Union

from .errors import OversizedRecord, Truncated, TruncatedRecord, UnknownMagic

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8)
MAX_VLAN_TAGS = 2

IPPROTO_UDP = 17
# IPv6 extension headers walked before giving up on the packet
_IPV6_EXT = {0, 43, 60}
_IPV6_FRAGMENT = 44

# magic -> (byte order, nanosecond resolution)
_MAGICS = {
    b"\xa1\xb2\xc3\xd4": (">", False),
    b"\xd4\xc3\xb2\xa1": ("<", False),
    b"\xa1\xb2\x3c\x4d": (">", True),
    b"\x4d\x3c\xb2\xa1": ("<", True),
}


@dataclass(frozen=True)
class CaptureMeta:
    byte_order: str  # "big" | "little"
    ts_resolution: str  # "microsecond" | "nanosecond"
    link_type: int
    snap_len: int
    version_major: int = 2
    version_minor: int = 4
    thiszone: int = 0
    sigfigs: int = 0

    @property
    def struct_prefix(self) -> str:
        return ">" if self.byte_order == "big" else "<"

    @property
    def frac_ns(self) -> int:
        """Nanoseconds per unit of the fractional timestamp field."""
        return 1 if self.ts_resolution == "nanosecond" else 1000


@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_frac: int
    original_len: int
    data: bytes
    frac_ns: int = 1000

    @property
    def captured_len(self) -> int:
        return len(self.data)

    @property
    def ts_ns(self) -> int:
        return self.ts_sec * 1_000_000_000 + self.ts_frac * self.frac_ns


class Endpoint(NamedTuple):
    ip: Union[ipaddress.IPv4Address, ipaddress.IPv6Address]
    port: int

    def __str__(self) -> str:
        if self.ip.version == 6:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, _, port = text.rpartition(":")
        host = host.strip("[]")
        return cls(ipaddress.ip_address(host), int(port))


@dataclass(frozen=True)
class UdpDatagram:
    src: Endpoint
    dst: Endpoint
    payload: bytes
    frame_len: int
    ts_ns: int

    @property
    def src_ip(self):
        return self.src.ip

    @property
    def dst_ip(self):
        return self.dst.ip


@dataclass(frozen=True)
class NotUdp:
    """Frame skipped by decapsulation; ``reason`` is kept for ledger stats."""

    reason: str


SKIP_REASONS = (
    "UnsupportedLink",
    "NotIP",
    "NotUDP",
    "Fragment",
    "Truncated",
    "Malformed",
)


def parse_capture_header(header: bytes) -> CaptureMeta:
    if len(header) < GLOBAL_HEADER_LEN:
        raise Truncated(f"capture header needs 24 bytes, got {len(header)}")
    magic = bytes(header[:4])
    try:
        order, nano = _MAGICS[magic]
    except KeyError:
        raise UnknownMagic(f"not a capture file (magic {magic.hex()})") from None
    major, minor, thiszone, sigfigs, snap_len, link_type = struct.unpack(
        order + "HHiIII", header[4:24]
    )
    return CaptureMeta(
        byte_order="big" if order == ">" else "little",
        ts_resolution="nanosecond" if nano else "microsecond",
        link_type=link_type,
        snap_len=snap_len,
        version_major=major,
        version_minor=minor,
        thiszone=thiszone,
        sigfigs=sigfigs,
    )


def write_capture_header(meta: CaptureMeta) -> bytes:
    p = meta.struct_prefix
    nano = meta.ts_resolution == "nanosecond"
    magic = 0xA1B23C4D if nano else 0xA1B2C3D4
    return struct.pack(
        p + "IHHiIII",
        magic,
        meta.version_major,
        meta.version_minor,
        meta.thiszone,
        meta.sigfigs,
        meta.snap_len,
        meta.link_type,
    )


def next_packet(stream: BinaryIO, meta: CaptureMeta) -> Optional[PacketRecord]:
    """Read one record; ``None`` at a clean end of stream.

    On :class:`TruncatedRecord` the stream is rewound to the record boundary
    so a tail-reader can retry once more bytes arrive.
    """
    start = stream.tell()
    head = stream.read(RECORD_HEADER_LEN)
    if not head:
        return None
    if len(head) < RECORD_HEADER_LEN:
        stream.seek(start)
        raise TruncatedRecord(f"record header at offset {start} cut short")
    ts_sec, ts_frac, incl_len, orig_len = struct.unpack(meta.struct_prefix + "IIII", head)
    if incl_len > meta.snap_len or incl_len > orig_len:
        stream.seek(start)
        raise OversizedRecord(
            f"record at offset {start}: captured_len {incl_len} "
            f"(snap_len {meta.snap_len}, original_len {orig_len})"
        )
    body = stream.read(incl_len)
    if len(body) < incl_len:
        stream.seek(start)
        raise TruncatedRecord(
            f"record at offset {start} declares {incl_len} bytes, {len(body)} available"
        )
    return PacketRecord(ts_sec, ts_frac, orig_len, body, meta.frac_ns)


def write_record(record: PacketRecord, meta: CaptureMeta) -> bytes:
    head = struct.pack(
        meta.struct_prefix + "IIII",
        record.ts_sec,
        record.ts_frac,
        record.captured_len,
        record.original_len,
    )
    return head + record.data


def decapsulate(record: PacketRecord, meta: CaptureMeta) -> Union[UdpDatagram, NotUdp]:
    """Strip link and network layers. Never raises on malformed input."""
    data = record.data
    link = meta.link_type
    if link == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return NotUdp("Truncated")
        ethertype = int.from_bytes(data[12:14], "big")
        off = 14
        tags = 0
        while ethertype in ETHERTYPE_VLAN:
            tags += 1
            if tags > MAX_VLAN_TAGS:
                return NotUdp("Malformed")
            if len(data) < off + 4:
                return NotUdp("Truncated")
            ethertype = int.from_bytes(data[off + 2 : off + 4], "big")
            off += 4
        if ethertype == ETHERTYPE_IPV4:
            return _ipv4(data, off, record)
        if ethertype == ETHERTYPE_IPV6:
            return _ipv6(data, off, record)
        return NotUdp("NotIP")
    if link == LINKTYPE_LINUX_SLL:
        if len(data) < 16:
            return NotUdp("Truncated")
        proto = int.from_bytes(data[14:16], "big")
        if proto == ETHERTYPE_IPV4:
            return _ipv4(data, 16, record)
        if proto == ETHERTYPE_IPV6:
            return _ipv6(data, 16, record)
        return NotUdp("NotIP")
    if link == LINKTYPE_RAW:
        if not data:
            return NotUdp("Truncated")
        version = data[0] >> 4
        if version == 4:
            return _ipv4(data, 0, record)
        if version == 6:
            return _ipv6(data, 0, record)
        return NotUdp("NotIP")
    return NotUdp("UnsupportedLink")


def _ipv4(data: bytes, off: int, record: PacketRecord) -> Union[UdpDatagram, NotUdp]:
    if len(data) < off + 20:
        return NotUdp("Truncated")
    vihl = data[off]
    if vihl >> 4 != 4:
        return NotUdp("Malformed")
    ihl = (vihl & 0x0F) * 4
    if ihl < 20:
        return NotUdp("Malformed")
    total_len = int.from_bytes(data[off + 2 : off + 4], "big")
    if total_len < ihl:
        return NotUdp("Malformed")
    if len(data) < off + ihl:
        return NotUdp("Truncated")
    frag = int.from_bytes(data[off + 6 : off + 8], "big") & 0x1FFF
    if frag:
        return NotUdp("Fragment")
    if data[off + 9] != IPPROTO_UDP:
        return NotUdp("NotUDP")
    src = ipaddress.IPv4Address(data[off + 12 : off + 16])
    dst = ipaddress.IPv4Address(data[off + 16 : off + 20])
    # the IP total length bounds the UDP segment (trailing Ethernet padding excluded)
    end = min(len(data), off + total_len)
    return _udp(data, off + ihl, end, src, dst, record)


def _ipv6(data: bytes, off: int, record: PacketRecord) -> Union[UdpDatagram, NotUdp]:
    if len(data) < off + 40:
        return NotUdp("Truncated")
    if data[off] >> 4 != 6:
        return NotUdp("Malformed")
    payload_len = int.from_bytes(data[off + 4 : off + 6], "big")
    nxt = data[off + 6]
    src = ipaddress.IPv6Address(data[off + 8 : off + 24])
    dst = ipaddress.IPv6Address(data[off + 24 : off + 40])
    end = min(len(data), off + 40 + payload_len)
    pos = off + 40
    for _ in range(8):
        if nxt == IPPROTO_UDP:
            return _udp(data, pos, end, src, dst, record)
        if nxt == _IPV6_FRAGMENT:
            if end < pos + 8:
                return NotUdp("Truncated")
            if int.from_bytes(data[pos + 2 : pos + 4], "big") >> 3:
                return NotUdp("Fragment")
            nxt = data[pos]
            pos += 8
        elif nxt in _IPV6_EXT:
            if end < pos + 2:
                return NotUdp("Truncated")
            nxt, pos = data[pos], pos + (data[pos + 1] + 1) * 8
        else:
            return NotUdp("NotUDP")
    return NotUdp("Malformed")


def _udp(data, off, end, src, dst, record) -> Union[UdpDatagram, NotUdp]:
    if end < off + 8:
        return NotUdp("Truncated")
    sport, dport, length = struct.unpack("!HHH", data[off : off + 6])
    if length < 8:
        return NotUdp("Malformed")
    if off + length > end:
        return NotUdp("Truncated")
    return UdpDatagram(
        src=Endpoint(src, sport),
        dst=Endpoint(dst, dport),
        payload=bytes(data[off + 8 : off + length]),
        frame_len=record.original_len,
        ts_ns=record.ts_ns,
    )


def iter_packets(stream: BinaryIO):
    """Yield ``(meta, record)`` pairs for a complete capture stream."""
    meta = parse_capture_header(stream.read(GLOBAL_HEADER_LEN))
    while True:
        rec = next_packet(stream, meta)
        if rec is None:
            return
        yield meta, rec
