"""Open a case ledger, record an analysis, then show tamper detection."""

import tempfile
from pathlib import Path

from wiretrace.fixture import gen_fixture, trace_spec
from wiretrace.ledger import BaselineRecord, Ledger
from wiretrace.pipeline import run_batch

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    baseline = BaselineRecord(
        case_id="DEMO-1",
        investigator="Examiner A",
        method_description="gateway capture on the subscriber line",
        environment_description="analysis workstation, offline",
        legal_reference="warrant 2026/001",
    )
    ledger = Ledger.create(tmp / "case" / "ledger.jsonl", baseline)

    cap = tmp / "trace.pcap"
    cap.write_bytes(gen_fixture(trace_spec()))
    run_batch(cap, ledger=ledger)

    for e in Ledger(ledger.path).entries:
        print(f"{e.seq:3d}  {e.action:<16} {e.entry_hash[:16]}")
    print(f"\nverify: {ledger.verify()}")

    # change one byte of a stored payload and verify again
    seg = ledger.find("segment_stored")[0]
    blob = ledger.resolve(seg.payload_ref)
    data = bytearray(blob.read_bytes())
    data[40] ^= 0x01
    blob.write_bytes(bytes(data))
    print(f"after flipping one bit of segment 0: {Ledger(ledger.path).verify()}")
