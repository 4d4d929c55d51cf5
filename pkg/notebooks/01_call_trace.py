"""Walk through one synthetic call: capture bytes, STUN events, one session.

Run with ``python3 notebooks/01_call_trace.py``.
"""

import tempfile
from pathlib import Path

from wiretrace.fixture import gen_fixture, trace_spec
from wiretrace.pipeline import run_batch

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "trace.pcap"
    path.write_bytes(gen_fixture(trace_spec()))
    print(f"capture: {path.stat().st_size} bytes")

    result = run_batch(path)
    print("\nSTUN Binding Requests seen:")
    for e in result.events:
        print(f"  {e.ts_ns / 1e9:12.6f}  {e.src} -> {e.dst}")

    # four keepalives about 0.6 s apart collapse into a single session
    report = result.report()
    for s in report["sessions"]:
        print(f"\nsession {s['session_id']}: {s['local']} -> {s['remote']}")
        print(f"  start {s['start_offset']}  end {s['end_offset']}  duration {s['duration']} s")
        print(f"  binding requests {s['binding_count']}")

    print("\nnarrative:")
    print(result.narrative())
