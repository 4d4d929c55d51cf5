"""Fold STUN Binding Request events into call sessions.

Events between the same (local, remote) endpoint pair belong to one session
as long as consecutive keepalives are no more than ``gap`` apart. Sessions
that start shortly after another one ends on the same local host are
linked as handovers.
"""

from __future__ import annotations

import enum
import heapq
import ipaddress
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .capture import Endpoint
from .errors import OutOfOrderEvent
from .stun import BindingEvent
from .timefmt import NS

DEFAULT_EXCLUDED = (
    "10.0.0.0/8",
    "172.16.0.0/12",
    "192.168.0.0/16",
    "127.0.0.0/8",
    "169.254.0.0/16",
    "100.64.0.0/10",
)
# a display filter written as "ip.dst != 192.168.1.0/16", with the mask applied
LITERAL_FILTER = ("192.168.0.0/16",)

DEFAULT_GAP_NS = 10 * NS
DEFAULT_REORDER_NS = 1 * NS


@dataclass(frozen=True)
class AddressPolicy:
    excluded_ranges: Tuple[ipaddress._BaseNetwork, ...]

    @classmethod
    def from_cidrs(cls, cidrs: Iterable[str]) -> "AddressPolicy":
        # strict=False normalizes host bits, e.g. 192.168.1.0/16 -> 192.168.0.0/16
        return cls(tuple(ipaddress.ip_network(c, strict=False) for c in cidrs))

    @classmethod
    def default(cls) -> "AddressPolicy":
        return cls.from_cidrs(DEFAULT_EXCLUDED)

    @classmethod
    def literal(cls) -> "AddressPolicy":
        return cls.from_cidrs(LITERAL_FILTER)

    def excludes(self, ip) -> bool:
        return any(ip.version == net.version and ip in net for net in self.excluded_ranges)

    def as_strings(self) -> List[str]:
        return [str(n) for n in self.excluded_ranges]


class Admission(enum.Enum):
    ADMITTED = "admitted"
    FILTERED_PRIVATE = "filtered_private"


def admit(event: BindingEvent, policy: AddressPolicy) -> Admission:
    if policy.excludes(event.dst.ip):
        return Admission.FILTERED_PRIVATE
    return Admission.ADMITTED


class Direction(str, enum.Enum):
    OUTGOING = "outgoing_observed"
    INCOMING = "incoming_observed"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class CallSession:
    session_id: str
    local: Endpoint
    remote: Endpoint
    start_ns: int
    end_ns: int
    binding_count: int
    direction: Direction = Direction.UNKNOWN
    handover_from: Optional[str] = None

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns

    @property
    def mean_keepalive_gap(self) -> Optional[float]:
        """Seconds between keepalives; ``None`` for one-packet sessions."""
        if self.binding_count < 2:
            return None
        return self.duration_ns / (self.binding_count - 1) / NS


@dataclass(frozen=True)
class HandoverLink:
    prior_session: str
    next_session: str
    gap_ns: int

    @property
    def gap(self) -> float:
        return self.gap_ns / NS


class SessionUpdate(NamedTuple):
    session_id: str
    opened: bool
    sealed: Optional[CallSession]  # prior session on the same pair closed by this event


@dataclass
class _Open:
    session_id: str
    local: Endpoint
    remote: Endpoint
    start_ns: int
    end_ns: int
    count: int
    direction: Direction

    def seal(self) -> CallSession:
        return CallSession(
            self.session_id,
            self.local,
            self.remote,
            self.start_ns,
            self.end_ns,
            self.count,
            self.direction,
        )


def orient(
    event: BindingEvent, policy: AddressPolicy, subjects: frozenset = frozenset()
) -> Tuple[Endpoint, Endpoint, Direction]:
    """Return ``(local, remote, direction)`` for an admitted event."""
    src, dst = event.src, event.dst
    if subjects:
        if src.ip in subjects:
            return src, dst, Direction.OUTGOING
        if dst.ip in subjects and not policy.excludes(src.ip):
            return dst, src, Direction.INCOMING
    # unconfigured: the sender is the inside host (the destination already passed the filter)
    return src, dst, Direction.UNKNOWN


class SessionTable:
    """Open sessions of one capture stream. Single writer."""

    def __init__(
        self,
        policy: AddressPolicy,
        gap_ns: int = DEFAULT_GAP_NS,
        reorder_tolerance_ns: int = DEFAULT_REORDER_NS,
        subjects: Iterable = (),
        id_prefix: str = "S",
    ):
        self.policy = policy
        self.gap_ns = gap_ns
        self.reorder_tolerance_ns = reorder_tolerance_ns
        self.subjects = frozenset(ipaddress.ip_address(str(s)) for s in subjects)
        self.id_prefix = id_prefix
        self.open: Dict[Tuple[Endpoint, Endpoint], _Open] = {}
        self.counter = 0

    def _new_id(self) -> str:
        self.counter += 1
        return f"{self.id_prefix}{self.counter:05d}"

    def ingest(self, event: BindingEvent) -> SessionUpdate:
        local, remote, direction = orient(event, self.policy, self.subjects)
        key = (local, remote)
        cur = self.open.get(key)
        sealed = None
        if cur is not None:
            if event.ts_ns < cur.end_ns - self.reorder_tolerance_ns:
                raise OutOfOrderEvent(
                    f"event at {event.ts_ns} ns precedes session {cur.session_id} "
                    f"end {cur.end_ns} ns by more than the reorder tolerance"
                )
            if event.ts_ns - cur.end_ns <= self.gap_ns:
                cur.start_ns = min(cur.start_ns, event.ts_ns)
                cur.end_ns = max(cur.end_ns, event.ts_ns)
                cur.count += 1
                return SessionUpdate(cur.session_id, False, None)
            sealed = cur.seal()
        sid = self._new_id()
        self.open[key] = _Open(sid, local, remote, event.ts_ns, event.ts_ns, 1, direction)
        return SessionUpdate(sid, True, sealed)

    def close_idle(self, now_ns: int) -> List[CallSession]:
        """Seal every open session idle for longer than the gap."""
        done = [k for k, s in self.open.items() if now_ns - s.end_ns > self.gap_ns]
        return [self.open.pop(k).seal() for k in done]

    def close_all(self) -> List[CallSession]:
        out = [s.seal() for s in self.open.values()]
        self.open.clear()
        return out

    def snapshot(self) -> dict:
        return {
            "counter": self.counter,
            "open": [
                {
                    "session_id": s.session_id,
                    "local": str(s.local),
                    "remote": str(s.remote),
                    "start_ns": s.start_ns,
                    "end_ns": s.end_ns,
                    "count": s.count,
                    "direction": s.direction.value,
                }
                for s in self.open.values()
            ],
        }

    def restore(self, snap: dict) -> None:
        self.counter = snap["counter"]
        self.open = {}
        for d in snap["open"]:
            s = _Open(
                d["session_id"],
                Endpoint.parse(d["local"]),
                Endpoint.parse(d["remote"]),
                d["start_ns"],
                d["end_ns"],
                d["count"],
                Direction(d["direction"]),
            )
            self.open[(s.local, s.remote)] = s


class ReorderBuffer:
    """Bounded-lateness reordering in front of a :class:`SessionTable`.

    An event is released once the newest timestamp seen is at least
    ``tolerance`` past it. Events older than the last released one are
    rejected with :class:`OutOfOrderEvent`.
    """

    def __init__(self, tolerance_ns: int = DEFAULT_REORDER_NS):
        self.tolerance_ns = tolerance_ns
        self.heap: List[Tuple[int, int, BindingEvent]] = []
        self.seq = 0
        self.max_seen: Optional[int] = None
        self.released: Optional[int] = None

    def push(self, event: BindingEvent) -> List[BindingEvent]:
        if self.released is not None and event.ts_ns < self.released:
            raise OutOfOrderEvent(
                f"event at {event.ts_ns} ns arrived after {self.released} ns was released"
            )
        heapq.heappush(self.heap, (event.ts_ns, self.seq, event))
        self.seq += 1
        if self.max_seen is None or event.ts_ns > self.max_seen:
            self.max_seen = event.ts_ns
        return self._release(self.max_seen - self.tolerance_ns)

    def flush(self) -> List[BindingEvent]:
        if self.max_seen is None:
            return []
        return self._release(self.max_seen)

    def _release(self, upto: int) -> List[BindingEvent]:
        out = []
        while self.heap and self.heap[0][0] <= upto:
            ts, _, ev = heapq.heappop(self.heap)
            self.released = ts
            out.append(ev)
        return out


def link_handovers(sessions: Sequence[CallSession], gap_ns: int = DEFAULT_GAP_NS) -> List[HandoverLink]:
    """Pair each session with at most one successor on the same local host.

    A successor qualifies when it starts within ``[0, gap]`` after the prior
    session ends and its endpoint pair differs (remote changed or local port
    changed). Earliest-starting successor wins; a session is claimed as
    successor at most once.
    """
    ordered = sorted(sessions, key=lambda s: (s.start_ns, s.session_id))
    links: List[HandoverLink] = []
    claimed = set()
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            if b.start_ns - a.end_ns > gap_ns:
                break
            if b.session_id in claimed or b.local.ip != a.local.ip:
                continue
            if b.remote == a.remote and b.local.port == a.local.port:
                continue
            g = b.start_ns - a.end_ns
            if 0 <= g <= gap_ns:
                links.append(HandoverLink(a.session_id, b.session_id, g))
                claimed.add(b.session_id)
                break
    return links


def apply_handovers(sessions: Sequence[CallSession], links: Iterable[HandoverLink]) -> List[CallSession]:
    prior = {l.next_session: l.prior_session for l in links}
    return [replace(s, handover_from=prior.get(s.session_id)) for s in sessions]


def session_stats(session: CallSession) -> dict:
    return {
        "duration": session.duration_ns / NS,
        "mean_keepalive_gap": session.mean_keepalive_gap,
    }


def reconstruct(
    events: Iterable[BindingEvent],
    policy: AddressPolicy,
    gap_ns: int = DEFAULT_GAP_NS,
    subjects: Iterable = (),
) -> List[CallSession]:
    """Batch helper: admit, sort, ingest and seal; sessions in start order."""
    admitted = [e for e in events if admit(e, policy) is Admission.ADMITTED]
    admitted.sort(key=lambda e: e.ts_ns)
    table = SessionTable(policy, gap_ns, subjects=subjects)
    out: List[CallSession] = []
    for e in admitted:
        upd = table.ingest(e)
        if upd.sealed is not None:
            out.append(upd.sealed)
    out.extend(table.close_all())
    out.sort(key=lambda s: (s.start_ns, s.session_id))
    return out
