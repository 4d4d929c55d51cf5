"""Activity routines from presence ("online" / "last seen") observation logs.

All times are integer UTC seconds so that histogram totals and joint
online time are exact.
"""

from __future__ import annotations

import csv
import enum
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

from .errors import UnsortedInput
from .timefmt import NS, parse_iso_ns

DEFAULT_OFFLINE_TIMEOUT = 300
DEFAULT_ALTERNATION_GAP = 60
LOG_HEADER = ("subject", "timestamp", "state", "last_seen")


class State(str, enum.Enum):
    ONLINE = "online"
    OFFLINE = "offline"
    LAST_SEEN = "last_seen"


@dataclass(frozen=True)
class PresenceObservation:
    subject: str
    ts: int
    state: State
    last_seen: Optional[int] = None

    def __post_init__(self):
        if self.state is State.LAST_SEEN:
            if self.last_seen is None or self.last_seen > self.ts:
                raise ValueError(f"last_seen {self.last_seen} must be <= observation time {self.ts}")


@dataclass(frozen=True)
class OnlineInterval:
    subject: str
    start: int
    end: int
    uncertain: bool = False

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class RoutineProfile:
    subject: str
    hourly_activity: Tuple[int, ...]
    observation_span: Optional[Tuple[int, int]]
    tz_offset: int = 0


def reconstruct_intervals(
    observations: Sequence[PresenceObservation],
    offline_timeout: int = DEFAULT_OFFLINE_TIMEOUT,
) -> List[OnlineInterval]:
    """Online intervals for one subject.

    An online observation opens or extends an interval; offline and
    last-seen observations close it at their own timestamp. Silence longer
    than ``offline_timeout`` after the last online sighting closes the
    interval at ``last_online + offline_timeout`` and marks it uncertain.
    Zero-length intervals are dropped and touching ones merged.
    """
    for prev, cur in zip(observations, observations[1:]):
        if cur.ts < prev.ts:
            raise UnsortedInput(f"observation at {cur.ts} follows {prev.ts}")
    subject = observations[0].subject if observations else ""
    raw: List[Tuple[int, int, bool]] = []
    start: Optional[int] = None
    last_online = 0
    for ob in observations:
        if start is not None and ob.ts - last_online > offline_timeout:
            raw.append((start, last_online + offline_timeout, True))
            start = None
        if ob.state is State.ONLINE:
            if start is None:
                start = ob.ts
            last_online = ob.ts
        elif start is not None:
            raw.append((start, ob.ts, False))
            start = None
    if start is not None:
        raw.append((start, last_online + offline_timeout, True))

    out: List[OnlineInterval] = []
    for s, e, unc in raw:
        if e <= s:
            continue
        if out and out[-1].end == s:
            prev = out.pop()
            out.append(OnlineInterval(subject, prev.start, e, prev.uncertain or unc))
        else:
            out.append(OnlineInterval(subject, s, e, unc))
    return out


def routine_histogram(
    intervals: Sequence[OnlineInterval], tz_offset: int = 0, subject: str = ""
) -> RoutineProfile:
    """Online seconds per local hour of day; ``tz_offset`` in minutes east of UTC."""
    bins = [0] * 24
    shift = tz_offset * 60
    for iv in intervals:
        t = iv.start + shift
        end = iv.end + shift
        while t < end:
            hour_end = (t // 3600 + 1) * 3600
            step = min(hour_end, end) - t
            bins[(t // 3600) % 24] += step
            t += step
    span = (intervals[0].start, intervals[-1].end) if intervals else None
    name = subject or (intervals[0].subject if intervals else "")
    return RoutineProfile(name, tuple(bins), span, tz_offset)


def _union(intervals: Iterable[OnlineInterval]) -> List[Tuple[int, int]]:
    merged: List[List[int]] = []
    for s, e in sorted((iv.start, iv.end) for iv in intervals):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def _measure(spans) -> int:
    return sum(e - s for s, e in spans)


@dataclass(frozen=True)
class Copresence:
    joint_seconds: int
    jaccard: float
    alternation_count: int


def copresence(
    intervals_a: Sequence[OnlineInterval],
    intervals_b: Sequence[OnlineInterval],
    alternation_gap: int = DEFAULT_ALTERNATION_GAP,
) -> Copresence:
    ua, ub = _union(intervals_a), _union(intervals_b)
    joint = 0
    i = j = 0
    while i < len(ua) and j < len(ub):
        lo = max(ua[i][0], ub[j][0])
        hi = min(ua[i][1], ub[j][1])
        if hi > lo:
            joint += hi - lo
        if ua[i][1] < ub[j][1]:
            i += 1
        else:
            j += 1
    union = _measure(ua) + _measure(ub) - joint
    jaccard = joint / union if union else 0.0

    # one subject goes offline and the other comes online shortly after
    alternations = 0
    for xs, ys in ((ua, ub), (ub, ua)):
        for _, x_end in xs:
            alternations += sum(1 for y_start, _ in ys if 0 <= y_start - x_end <= alternation_gap)
    return Copresence(joint, jaccard, alternations)


def read_observation_log(stream: TextIO) -> Dict[str, List[PresenceObservation]]:
    """Parse a delimited observation log into per-subject sorted lists.

    Columns: ``subject,timestamp,state[,last_seen]`` with a header row.
    Timestamps are ISO-8601 and truncated to whole seconds.
    """
    sample = stream.read()
    if not sample.strip():
        return {}
    try:
        dialect = csv.Sniffer().sniff(sample.splitlines()[0], delimiters=",;\t|")
    except csv.Error:
        dialect = csv.excel
    reader = csv.DictReader(io.StringIO(sample), dialect=dialect)
    missing = {"subject", "timestamp", "state"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"observation log lacks columns: {sorted(missing)}")
    per: Dict[str, List[PresenceObservation]] = defaultdict(list)
    for row in reader:
        ts = parse_iso_ns(row["timestamp"]) // NS
        state = State(row["state"].strip().lower())
        ls = row.get("last_seen") or ""
        last_seen = parse_iso_ns(ls) // NS if ls.strip() else None
        if state is State.LAST_SEEN and last_seen is None:
            raise ValueError(f"last_seen observation without a last_seen time: {row}")
        subject = row["subject"].strip()
        per[subject].append(PresenceObservation(subject, ts, state, last_seen))
    # stable: ties keep log order
    return {s: sorted(obs, key=lambda o: o.ts) for s, obs in sorted(per.items())}
