"""Capture processing: batch passes, tail-following, segment custody.

Both modes push records through the same :class:`StreamAnalyzer`, so a
follow run that sees a file grow in pieces (even across a suspend and
resume) seals exactly the sessions a single batch pass would, provided no
pause in growth outlasts the idle gap. A longer pause closes the open
sessions for good, as it would on a live link that went silent.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import __version__
from .capture import (
    GLOBAL_HEADER_LEN,
    CaptureMeta,
    Endpoint,
    NotUdp,
    PacketRecord,
    decapsulate,
    next_packet,
    parse_capture_header,
)
from .config import RunConfig
from .errors import (
    CaptureError,
    OutOfOrderEvent,
    OversizedRecord,
    SourceVanished,
    TruncatedRecord,
)
from .ledger import Ledger, MirrorSink, canonical_json
from .sessions import (
    Admission,
    CallSession,
    Direction,
    HandoverLink,
    ReorderBuffer,
    SessionTable,
    admit,
    apply_handovers,
    link_handovers,
)
from .stun import BindingEvent, NotStun, decode_stun, is_binding_request, to_binding_event
from .timefmt import iso_ns, parse_seconds, seconds_str

log = logging.getLogger(__name__)

REPORT_SCHEMA = "wiretrace.session-report/1"
REPORT_NOTES = (
    "durations are signalling-observed (first to last Binding Request), not asserted call durations",
    "peer addresses appear in STUN traffic only when both parties are in each other's contacts",
    "a carrier-grade NAT peer address identifies a subscriber only with the provider's port/time logs",
)


@dataclass(frozen=True)
class Segment:
    index: int
    start_offset: int
    byte_len: int
    first_ts_ns: Optional[int]
    last_ts_ns: Optional[int]
    digest: str
    path: str


class StreamAnalyzer:
    """Decaps -> STUN -> admission -> reordering -> sessions for one stream."""

    def __init__(self, config: RunConfig, source_id: str = "capture", keep_events: bool = True):
        self.config = config
        self.policy = config.policy
        self.table = SessionTable(
            self.policy, config.gap_ns, config.reorder_ns, config.subjects, id_prefix="S"
        )
        self.buffer = ReorderBuffer(config.reorder_ns)
        self.sealed: List[CallSession] = []
        self.events: List[BindingEvent] = []
        self.keep_events = keep_events
        self.anomalies: List[str] = []
        self.stats: Counter = Counter()
        self.skips: Counter = Counter()

    def feed(self, record: PacketRecord, meta: CaptureMeta) -> List[CallSession]:
        self.stats["frames"] += 1
        dgram = decapsulate(record, meta)
        if isinstance(dgram, NotUdp):
            self.skips[dgram.reason] += 1
            return []
        self.stats["udp"] += 1
        msg = decode_stun(dgram.payload)
        if isinstance(msg, NotStun):
            return []
        self.stats["stun"] += 1
        if not is_binding_request(msg):
            return []
        self.stats["binding_requests"] += 1
        event = to_binding_event(dgram, msg)
        if admit(event, self.policy) is Admission.FILTERED_PRIVATE:
            self.stats["filtered_private"] += 1
            return []
        try:
            released = self.buffer.push(event)
        except OutOfOrderEvent as exc:
            self.stats["out_of_order"] += 1
            self.anomalies.append(f"OutOfOrderEvent: {exc}")
            return []
        return self._ingest(released)

    def _ingest(self, events: List[BindingEvent]) -> List[CallSession]:
        out = []
        for ev in events:
            try:
                upd = self.table.ingest(ev)
            except OutOfOrderEvent as exc:
                self.stats["out_of_order"] += 1
                self.anomalies.append(f"OutOfOrderEvent: {exc}")
                continue
            self.stats["admitted"] += 1
            if self.keep_events:
                self.events.append(ev)
            if upd.sealed is not None:
                out.append(upd.sealed)
        if self.buffer.released is not None:
            # nothing released later can be older than this, so idle sessions are final
            out.extend(self.table.close_idle(self.buffer.released))
        self.sealed.extend(out)
        return out

    def drain_idle(self) -> List[CallSession]:
        """Source went quiet: release buffered events and seal every open session."""
        out = self._ingest(self.buffer.flush())
        rest = self.table.close_all()
        self.sealed.extend(rest)
        return out + rest

    def finish(self) -> List[CallSession]:
        return self.drain_idle()

    def sessions(self) -> List[CallSession]:
        ordered = sorted(self.sealed, key=lambda s: (s.start_ns, s.session_id))
        return apply_handovers(ordered, self.links())

    def links(self) -> List[HandoverLink]:
        ordered = sorted(self.sealed, key=lambda s: (s.start_ns, s.session_id))
        return link_handovers(ordered, self.config.gap_ns)

    # state for suspend/resume
    def snapshot(self) -> dict:
        return {
            "table": self.table.snapshot(),
            "buffer": {
                "events": [dict(_event_to_dict(e), seq=q) for _, q, e in sorted(self.buffer.heap)],
                "seq": self.buffer.seq,
                "max_seen": self.buffer.max_seen,
                "released": self.buffer.released,
            },
            "sealed": [session_to_dict(s, 0) for s in self.sealed],
            "events": [_event_to_dict(e) for e in self.events],
            "anomalies": self.anomalies,
            "stats": dict(self.stats),
            "skips": dict(self.skips),
        }

    def restore(self, snap: dict) -> None:
        self.table.restore(snap["table"])
        b = snap["buffer"]
        self.buffer.heap = []
        for d in b["events"]:
            ev = _event_from_dict(d)
            heapq.heappush(self.buffer.heap, (ev.ts_ns, d["seq"], ev))
        self.buffer.seq = b["seq"]
        self.buffer.max_seen = b["max_seen"]
        self.buffer.released = b["released"]
        self.sealed = [session_from_dict(d) for d in snap["sealed"]]
        self.events = [_event_from_dict(d) for d in snap["events"]]
        self.anomalies = list(snap["anomalies"])
        self.stats = Counter(snap["stats"])
        self.skips = Counter(snap["skips"])


def _event_to_dict(e: BindingEvent) -> dict:
    return {
        "ts_ns": e.ts_ns,
        "src": str(e.src),
        "dst": str(e.dst),
        "frame_len": e.frame_len,
        "stun_length": e.stun_length,
        "transaction_id": e.transaction_id.hex(),
    }


def _event_from_dict(d: dict) -> BindingEvent:
    return BindingEvent(
        d["ts_ns"],
        Endpoint.parse(d["src"]),
        Endpoint.parse(d["dst"]),
        d["frame_len"],
        d["stun_length"],
        bytes.fromhex(d["transaction_id"]),
    )


def session_to_dict(s: CallSession, epoch_ns: int) -> dict:
    return {
        "session_id": s.session_id,
        "local": str(s.local),
        "remote": str(s.remote),
        "start": iso_ns(epoch_ns + s.start_ns),
        "end": iso_ns(epoch_ns + s.end_ns),
        "start_offset": seconds_str(s.start_ns),
        "end_offset": seconds_str(s.end_ns),
        "duration": seconds_str(s.duration_ns),
        "binding_count": s.binding_count,
        "mean_keepalive_gap": s.mean_keepalive_gap,
        "direction": s.direction.value,
        "handover_from": s.handover_from,
    }


def session_from_dict(d: dict) -> CallSession:
    return CallSession(
        d["session_id"],
        Endpoint.parse(d["local"]),
        Endpoint.parse(d["remote"]),
        parse_seconds(d["start_offset"]),
        parse_seconds(d["end_offset"]),
        d["binding_count"],
        Direction(d["direction"]),
        d.get("handover_from"),
    )


class _Segmenter:
    """Copies consumed byte ranges of the source into ledgered segment files."""

    def __init__(
        self,
        source: Path,
        source_id: str,
        ledger: Optional[Ledger],
        config: RunConfig,
        index: int = 0,
        start: int = 0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.source = source
        self.source_id = source_id
        self.ledger = ledger
        self.mirror = MirrorSink(config.mirror) if config.mirror else None
        self.limit_bytes = config.segment_bytes
        self.limit_seconds = config.segment_seconds
        self.index = index
        self.start = start
        self.first_ts: Optional[int] = None
        self.last_ts: Optional[int] = None
        self.clock = clock
        self.opened_at = clock()
        self.segments: List[Segment] = []

    def observe(self, end_offset: int, ts_ns: int, wall: bool = False) -> None:
        if self.first_ts is None:
            self.first_ts = ts_ns
        self.last_ts = ts_ns
        full = end_offset - self.start >= self.limit_bytes
        stale = wall and self.clock() - self.opened_at >= self.limit_seconds
        if full or stale:
            self.cut(end_offset)

    def cut(self, end_offset: int) -> Optional[Segment]:
        if self.ledger is None or end_offset <= self.start:
            return None
        seg_dir = self.ledger.root / "segments"
        seg_dir.mkdir(parents=True, exist_ok=True)
        path = seg_dir / f"{self.source_id}.{self.index:05d}.seg"
        with open(self.source, "rb") as src, open(path, "wb") as dst:
            src.seek(self.start)
            remaining = end_offset - self.start
            while remaining:
                chunk = src.read(min(remaining, 1 << 20))
                if not chunk:
                    raise SourceVanished(f"{self.source} shrank while segmenting")
                dst.write(chunk)
                remaining -= len(chunk)
            dst.flush()
            os.fsync(dst.fileno())
        detail = {
            "source": self.source_id,
            "index": self.index,
            "start_offset": self.start,
            "byte_len": end_offset - self.start,
            "first_ts_ns": self.first_ts,
            "last_ts_ns": self.last_ts,
        }
        entry = self.ledger.append("segment_stored", ref=path, detail=detail)
        if self.mirror is not None:
            copy = self.mirror.store(path)
            self.ledger.append("segment_mirrored", ref=copy, detail={"mirror_of": entry.seq, **detail})
        seg = Segment(self.index, self.start, end_offset - self.start, self.first_ts, self.last_ts, entry.payload_hash, str(path))
        self.segments.append(seg)
        self.index += 1
        self.start = end_offset
        self.first_ts = self.last_ts = None
        self.opened_at = self.clock()
        return seg


@dataclass
class RunResult:
    source_id: str
    meta: Optional[CaptureMeta]
    sessions: List[CallSession]
    links: List[HandoverLink]
    events: List[BindingEvent]
    anomalies: List[str]
    stats: Dict[str, int]
    skips: Dict[str, int]
    clock: dict
    config: RunConfig
    segments: List[Segment] = field(default_factory=list)
    run_entry: Optional[int] = None

    def report(self) -> dict:
        """The deterministic session report document."""
        epoch = self.clock["epoch_ns"]
        return {
            "schema": REPORT_SCHEMA,
            "source": self.source_id,
            "clock": self.clock,
            "policy": {"excluded_ranges": self.config.policy.as_strings(), "subjects": list(self.config.subjects)},
            "config": self.config.analysis_params(),
            "link_type": self.meta.link_type if self.meta else None,
            "sessions": [session_to_dict(s, epoch) for s in self.sessions],
            "handovers": [
                {"prior_session": l.prior_session, "next_session": l.next_session, "gap": seconds_str(l.gap_ns)}
                for l in self.links
            ],
            "stats": dict(sorted(self.stats.items())),
            "skipped": dict(sorted(self.skips.items())),
            "anomalies": list(self.anomalies),
            "notes": list(REPORT_NOTES),
        }

    def narrative(self) -> str:
        return narrate_report(self.report())


def narrate_report(rep: dict) -> str:
    lines = [
        f"Session report for {rep['source']}",
        f"clock base: {rep['clock']['base']} (epoch {rep['clock']['epoch_ns']} ns)",
        f"excluded ranges: {', '.join(rep['policy']['excluded_ranges']) or '(none)'}",
        f"binding requests: {rep['stats'].get('binding_requests', 0)}, "
        f"admitted: {rep['stats'].get('admitted', 0)}, "
        f"filtered as private: {rep['stats'].get('filtered_private', 0)}",
        f"sessions: {len(rep['sessions'])}",
    ]
    for s in rep["sessions"]:
        line = (
            f"  {s['session_id']}: {s['local']} -> {s['remote']} from {s['start']} to {s['end']} "
            f"({s['duration']} s, {s['binding_count']} binding requests, {s['direction']})"
        )
        if s.get("handover_from"):
            line += f", handover from {s['handover_from']}"
        lines.append(line)
    for a in rep["anomalies"]:
        lines.append(f"  anomaly: {a}")
    lines.extend(f"note: {n}" for n in rep["notes"])
    return "\n".join(lines) + "\n"


def report_bytes(rep: dict) -> bytes:
    return (json.dumps(rep, indent=2, sort_keys=True) + "\n").encode()


def _record_run(ledger: Optional[Ledger], result: Optional[RunResult], source_id: str, config: RunConfig, error: str = "") -> Optional[int]:
    if ledger is None:
        return None
    detail = {"source": source_id, "config": config.to_dict(), "clock": config.clock, "tool": __version__}
    if result is None:
        detail["status"] = "failed"
        detail["error"] = error
        return ledger.append("analysis_run", detail=detail).seq
    detail["status"] = "ok"
    detail["sessions"] = len(result.sessions)
    detail["anomalies"] = len(result.anomalies)
    detail["narrative_hash"] = ledger.digest(result.narrative().encode())
    return ledger.append("analysis_run", payload=report_bytes(result.report()), detail=detail).seq


def run_batch(
    path,
    config: Optional[RunConfig] = None,
    ledger: Optional[Ledger] = None,
    source_id: Optional[str] = None,
) -> RunResult:
    """One full pass over a finished capture file."""
    config = config or RunConfig()
    path = Path(path)
    source_id = source_id or path.name
    try:
        fh = open(path, "rb")
    except OSError as exc:
        _record_run(ledger, None, source_id, config, f"{type(exc).__name__}: {exc}")
        raise
    with fh:
        try:
            meta = parse_capture_header(fh.read(GLOBAL_HEADER_LEN))
        except CaptureError as exc:
            _record_run(ledger, None, source_id, config, f"{type(exc).__name__}: {exc}")
            raise
        analyzer = StreamAnalyzer(config, source_id)
        seg = _Segmenter(path, source_id, ledger, config)
        while True:
            try:
                rec = next_packet(fh, meta)
            except (TruncatedRecord, OversizedRecord) as exc:
                analyzer.anomalies.append(f"{type(exc).__name__}: {exc}")
                break
            if rec is None:
                break
            analyzer.feed(rec, meta)
            seg.observe(fh.tell(), rec.ts_ns)
        analyzer.finish()
        # trailing bytes of a cut-short record still belong to the evidence
        seg.cut(path.stat().st_size)
    result = RunResult(
        source_id, meta, analyzer.sessions(), analyzer.links(), analyzer.events, analyzer.anomalies,
        dict(analyzer.stats), dict(analyzer.skips), config.clock, config, seg.segments,
    )
    result.run_entry = _record_run(ledger, result, source_id, config)
    return result


def _digest_prefix(path: Path, length: int, algo: str) -> str:
    h = hashlib.new(algo)
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise SourceVanished(f"{path} disappeared") from None
    with fh:
        remaining = length
        while remaining:
            chunk = fh.read(min(remaining, 1 << 20))
            if not chunk:
                raise SourceVanished(f"{path} shrank")
            h.update(chunk)
            remaining -= len(chunk)
    return h.hexdigest()


class Follower:
    """Tail-reads a growing capture file.

    Call :meth:`poll` repeatedly (or :meth:`run`); each call consumes every
    complete record currently on disk and returns newly sealed sessions.
    A record cut short at end-of-file is simply retried on the next poll.
    """

    def __init__(
        self,
        path,
        config: Optional[RunConfig] = None,
        ledger: Optional[Ledger] = None,
        idle_gap: Optional[float] = None,
        source_id: Optional[str] = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.path = Path(path)
        self.config = config or RunConfig()
        self.ledger = ledger
        self.source_id = source_id or self.path.name
        self.idle_gap = self.config.session_gap if idle_gap is None else idle_gap
        self.clock = clock
        self.analyzer = StreamAnalyzer(self.config, self.source_id)
        self.meta: Optional[CaptureMeta] = None
        self.offset = 0
        self.packets_read = 0
        self.segmenter = _Segmenter(self.path, self.source_id, ledger, self.config, clock=clock)
        self.last_growth = clock()
        self.drained = True
        self.suspended = False

    def _open(self):
        try:
            return open(self.path, "rb")
        except FileNotFoundError:
            raise SourceVanished(f"{self.path} disappeared") from None

    def poll(self) -> List[CallSession]:
        if self.suspended:
            raise RuntimeError("follower is suspended")
        size = self._size()
        if size < self.offset:
            raise SourceVanished(f"{self.path} shrank below the consumed offset (rotated?)")
        out: List[CallSession] = []
        grew = False
        with self._open() as fh:
            if self.meta is None:
                head = fh.read(GLOBAL_HEADER_LEN)
                if len(head) < GLOBAL_HEADER_LEN:
                    return out
                self.meta = parse_capture_header(head)
                self.offset = GLOBAL_HEADER_LEN
                grew = True
            fh.seek(self.offset)
            while True:
                try:
                    rec = next_packet(fh, self.meta)
                except TruncatedRecord:
                    break
                if rec is None:
                    break
                grew = True
                self.packets_read += 1
                self.offset = fh.tell()
                out.extend(self.analyzer.feed(rec, self.meta))
                self.segmenter.observe(self.offset, rec.ts_ns, wall=True)
        now = self.clock()
        if grew:
            self.last_growth = now
            self.drained = False
        elif not self.drained and now - self.last_growth >= self.idle_gap:
            out.extend(self.analyzer.drain_idle())
            self.drained = True
        return out

    def _size(self) -> int:
        try:
            return self.path.stat().st_size
        except FileNotFoundError:
            raise SourceVanished(f"{self.path} disappeared") from None

    def run(self, poll_interval: float = 0.5, should_stop: Callable[[], bool] = lambda: False, on_session=None) -> None:
        while not should_stop():
            for s in self.poll():
                if on_session:
                    on_session(s)
            time.sleep(poll_interval)

    def _prefix_digest(self) -> str:
        return _digest_prefix(self.path, self.offset, self.ledger.algo)

    def suspend(self) -> str:
        """Cut the open segment, record the cursor, return the resume token."""
        if self.ledger is None:
            raise RuntimeError("suspend needs a ledger")
        self.segmenter.cut(self.offset)
        state = {
            "analyzer": self.analyzer.snapshot(),
            "meta": None if self.meta is None else self.meta.__dict__,
            "drained": self.drained,
        }
        cursor = {
            "source": self.source_id,
            "path": str(self.path),
            "byte_offset": self.offset,
            "packets_read": self.packets_read,
            "segment_index": self.segmenter.index,
            "prefix_hash": self._prefix_digest(),
        }
        _, token = self.ledger.suspend(cursor, canonical_json(state).encode())
        self.suspended = True
        return token

    @classmethod
    def resume(
        cls,
        ledger: Ledger,
        token: str,
        config: Optional[RunConfig] = None,
        path=None,
        idle_gap: Optional[float] = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> "Follower":
        susp = ledger.pending_suspension()
        if susp is not None:
            # check the source before the token is spent
            pending = susp.details["cursor"]
            src = Path(path or pending["path"])
            if not src.exists():
                raise SourceVanished(f"{src} disappeared while suspended")
            if src.stat().st_size < pending["byte_offset"] or _digest_prefix(
                src, pending["byte_offset"], ledger.algo
            ) != pending["prefix_hash"]:
                raise SourceVanished(f"{src} no longer matches the data consumed before suspension")
        _, cursor, snapshot = ledger.resume(token)
        state = json.loads(snapshot)
        f = cls(path or cursor["path"], config, ledger, idle_gap, cursor["source"], clock)
        f.meta = CaptureMeta(**state["meta"]) if state["meta"] else None
        f.offset = cursor["byte_offset"]
        f.packets_read = cursor["packets_read"]
        f.drained = state["drained"]
        f.analyzer.restore(state["analyzer"])
        f.segmenter = _Segmenter(f.path, f.source_id, ledger, f.config, cursor["segment_index"], f.offset, clock)
        return f

    def finish(self) -> RunResult:
        """Consume what is left, seal everything and record the run."""
        self.poll()
        self.analyzer.finish()
        if self.ledger is not None:
            self.segmenter.cut(self._size())
        a = self.analyzer
        result = RunResult(
            self.source_id, self.meta, a.sessions(), a.links(), a.events, a.anomalies,
            dict(a.stats), dict(a.skips), self.config.clock, self.config, self.segmenter.segments,
        )
        result.run_entry = _record_run(self.ledger, result, self.source_id, self.config)
        return result


def run_follow(path, config=None, ledger=None, poll_interval=0.5, idle_gap=None, should_stop=lambda: False, on_session=None) -> Follower:
    f = Follower(path, config, ledger, idle_gap)
    f.run(poll_interval, should_stop, on_session)
    return f
