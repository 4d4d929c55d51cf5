"""Correlate sessions seen at both ends of one call.

Wiretap A sits behind caller 85.12.40.7, wiretap B behind callee
62.140.137.15. B's clock runs 1.5 s ahead of A's.
"""

import tempfile
from pathlib import Path

from wiretrace.correlate import correlate, narrate, optimal_total
from wiretrace.fixture import FixtureEvent, FixtureSpec, gen_fixture
from wiretrace.pipeline import run_batch
from wiretrace.timefmt import NS


def capture(path, start, local, remote, n=40, step=2.0):
    events = tuple(FixtureEvent(f"{start + k * step:.3f}", local, remote) for k in range(n))
    path.write_bytes(gen_fixture(FixtureSpec(events=events)))
    return path


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    a = run_batch(capture(tmp / "a.pcap", 1000.0, "192.168.2.2:45000", "62.140.137.15:3478"))
    b = run_batch(capture(tmp / "b.pcap", 1001.5, "10.1.1.9:45000", "85.12.40.7:3478"))

    ext = dict(external_a=["85.12.40.7"], external_b=["62.140.137.15"])
    matches = correlate(a.sessions, b.sessions, tolerance_ns=5 * NS, **ext)
    for m in matches:
        print(narrate(m))
        print(f"  overlap {m.overlap:.3f} after removing {m.applied_shift:+.1f} s of clock offset")

    best = optimal_total(a.sessions, b.sessions, tolerance_ns=5 * NS)
    print(f"\ngreedy total {sum(m.overlap for m in matches):.3f}, optimum {best:.3f}")

    # a tolerance below the real offset leaves part of it uncorrected
    for m in correlate(a.sessions, b.sessions, tolerance_ns=NS, **ext):
        print(f"with a 1 s tolerance: overlap {m.overlap:.3f}, confidence {m.confidence.value}")
