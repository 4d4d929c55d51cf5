"""Match call sessions seen on two simultaneous wiretaps.

Two legs of the same call start and stop together on both ends, so the
score is the intersection-over-union of the two session intervals after
allowing a bounded clock offset between the capture points.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ClockBaseMissing, InvalidInterval
from .sessions import CallSession
from .timefmt import NS

DEFAULT_TOLERANCE_NS = 5 * NS
DEFAULT_THETA = 0.8


class CrossMatch(str, enum.Enum):
    BOTH = "both"
    ONE_WAY = "one_way"
    NONE = "none"


class Confidence(str, enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass(frozen=True)
class CorrelationMatch:
    session_a: str
    session_b: str
    time_offset: float  # b.start - a.start, seconds, on the shared timebase
    applied_shift: float  # offset removed from b before scoring, seconds
    overlap: float
    ip_crossmatch: CrossMatch
    confidence: Confidence


def interval_overlap(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    """Intersection-over-union of two closed intervals."""
    (a0, a1), (b0, b1) = a, b
    if a0 > a1 or b0 > b1:
        raise InvalidInterval(f"start after end: {a!r} / {b!r}")
    inter = max(0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    if union == 0:
        # two points: identical or not
        return 1.0 if a0 == b0 else 0.0
    return inter / union


def best_shift(a: Tuple[int, int], b: Tuple[int, int], tolerance: int) -> Tuple[float, int]:
    """Maximize IoU of ``a`` against ``b`` shifted by ``-d``, ``|d| <= tolerance``.

    The intersection is a trapezoid in ``d`` whose plateau runs between the
    start-aligning and end-aligning shifts, so the optimum is the point of
    ``[-tolerance, tolerance]`` closest to that plateau. Among equal scores
    the smallest ``|d|`` is returned.
    """
    lo, hi = sorted((b[0] - a[0], b[1] - a[1]))
    d = min(max(0, lo), hi)
    d = min(max(d, -tolerance), tolerance)
    return interval_overlap(a, (b[0] - d, b[1] - d)), d


def classify(cross: CrossMatch, overlap: float, theta: float) -> Optional[Confidence]:
    if overlap >= theta:
        return Confidence.HIGH if cross is CrossMatch.BOTH else Confidence.MEDIUM
    if overlap > 0:
        return Confidence.LOW
    return None


def _externals(configured: Iterable, sessions: Sequence[CallSession]) -> frozenset:
    out = {ipaddress.ip_address(str(x)) for x in configured}
    # a public local address is already the subject's external address
    out.update(s.local.ip for s in sessions if s.local.ip.is_global)
    return frozenset(out)


def _crossmatch(a: CallSession, b: CallSession, ext_a, ext_b) -> CrossMatch:
    hits = (a.remote.ip in ext_b) + (b.remote.ip in ext_a)
    return (CrossMatch.NONE, CrossMatch.ONE_WAY, CrossMatch.BOTH)[hits]


def _check_epoch(epoch, name):
    if epoch is None:
        raise ClockBaseMissing(f"capture {name} has no absolute epoch")


def candidates(
    sessions_a: Sequence[CallSession],
    sessions_b: Sequence[CallSession],
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    epoch_a_ns: Optional[int] = 0,
    epoch_b_ns: Optional[int] = 0,
) -> List[Tuple[float, int, int, int]]:
    """All pairs with nonzero best overlap as ``(overlap, shift_ns, i, j)``."""
    _check_epoch(epoch_a_ns, "A")
    _check_epoch(epoch_b_ns, "B")
    out = []
    for i, a in enumerate(sessions_a):
        ia = (epoch_a_ns + a.start_ns, epoch_a_ns + a.end_ns)
        for j, b in enumerate(sessions_b):
            ib = (epoch_b_ns + b.start_ns, epoch_b_ns + b.end_ns)
            # interval distance beyond tolerance: cannot touch after any allowed slide
            if max(ia[0], ib[0]) - min(ia[1], ib[1]) > tolerance_ns:
                continue
            iou, d = best_shift(ia, ib, tolerance_ns)
            if iou > 0:
                out.append((iou, d, i, j))
    return out


def correlate(
    sessions_a: Sequence[CallSession],
    sessions_b: Sequence[CallSession],
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    theta: float = DEFAULT_THETA,
    epoch_a_ns: Optional[int] = 0,
    epoch_b_ns: Optional[int] = 0,
    external_a: Iterable = (),
    external_b: Iterable = (),
) -> List[CorrelationMatch]:
    """Greedy one-to-one matching by descending overlap.

    Ties go to the smaller clock shift, then the earlier start, then the
    session ids.
    """
    cands = candidates(sessions_a, sessions_b, tolerance_ns, epoch_a_ns, epoch_b_ns)
    ext_a = _externals(external_a, sessions_a)
    ext_b = _externals(external_b, sessions_b)

    def key(c):
        iou, d, i, j = c
        a, b = sessions_a[i], sessions_b[j]
        sa, sb = epoch_a_ns + a.start_ns, epoch_b_ns + b.start_ns
        ids = tuple(sorted((a.session_id, b.session_id)))
        return (-iou, abs(d), min(sa, sb), max(sa, sb), ids, a.session_id)

    used_a, used_b = set(), set()
    matches = []
    for iou, d, i, j in sorted(cands, key=key):
        if i in used_a or j in used_b:
            continue
        a, b = sessions_a[i], sessions_b[j]
        cross = _crossmatch(a, b, ext_a, ext_b)
        conf = classify(cross, iou, theta)
        if conf is None:
            continue
        used_a.add(i)
        used_b.add(j)
        offset = (epoch_b_ns + b.start_ns) - (epoch_a_ns + a.start_ns)
        matches.append(
            CorrelationMatch(a.session_id, b.session_id, offset / NS, d / NS, iou, cross, conf)
        )
    return matches


def optimal_total(
    sessions_a: Sequence[CallSession],
    sessions_b: Sequence[CallSession],
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    epoch_a_ns: Optional[int] = 0,
    epoch_b_ns: Optional[int] = 0,
) -> float:
    """Best achievable total overlap under one-to-one assignment."""
    cands = candidates(sessions_a, sessions_b, tolerance_ns, epoch_a_ns, epoch_b_ns)
    if not cands:
        return 0.0
    w = np.zeros((len(sessions_a), len(sessions_b)))
    for iou, _, i, j in cands:
        w[i, j] = iou
    rows, cols = linear_sum_assignment(w, maximize=True)
    return float(w[rows, cols].sum())


def greedy_deviation(matches: Sequence[CorrelationMatch], optimum: float) -> float:
    """Shortfall of the greedy total; greedy always reaches at least half the optimum."""
    return optimum - sum(m.overlap for m in matches)


def narrate(match: CorrelationMatch) -> str:
    cross = {
        CrossMatch.BOTH: "with mutual IP cross-match",
        CrossMatch.ONE_WAY: "with one-way IP cross-match",
        CrossMatch.NONE: "without IP cross-match",
    }[match.ip_crossmatch]
    return (
        f"session {match.session_a} on wiretap A overlaps session {match.session_b} "
        f"on wiretap B by {match.overlap:.0%} {cross} "
        f"(offset {match.time_offset:+.3f} s, confidence {match.confidence.value})"
    )
