import hashlib
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_baseline
from wiretrace.errors import BadResumeToken, ChainBroken, EmptyBaselineField, LedgerExists
from wiretrace.ledger import (
    FIELDS,
    GENESIS,
    Ledger,
    MirrorSink,
    diff_iterations,
    entry_digest,
    open_ledger,
    recorded_diffs,
    unexplained_differences,
)


def test_genesis(ledger):
    assert len(ledger) == 1
    e = ledger.entry(0)
    assert (e.seq, e.action, e.prev_hash) == (0, "baseline", GENESIS)
    assert GENESIS == "00" * 32
    assert ledger.verify().ok


def test_missing_investigator():
    with pytest.raises(EmptyBaselineField):
        make_baseline(investigator="")


def test_blank_legal_reference():
    with pytest.raises(EmptyBaselineField):
        make_baseline(legal_reference="   ")


def test_distinct_genesis(tmp_path):
    a = open_ledger(tmp_path / "a" / "l.jsonl", make_baseline(started_at="2026-01-01T00:00:00Z"))
    b = open_ledger(tmp_path / "b" / "l.jsonl", make_baseline(started_at="2026-01-01T00:00:01Z"))
    assert a.entry(0).entry_hash != b.entry(0).entry_hash


def test_refuses_overwrite(ledger):
    with pytest.raises(LedgerExists):
        Ledger.create(ledger.path, make_baseline())


def test_entry_hash_is_length_prefixed_sha256(ledger):
    e = ledger.entry(0)
    h = hashlib.sha256()
    for name in FIELDS[:-1]:
        raw = str(getattr(e, name)).encode()
        h.update(len(raw).to_bytes(8, "big") + raw)
    assert e.entry_hash == h.hexdigest()


def test_append_payload_digest(ledger):
    data = bytes(random.Random(0).randrange(256) for _ in range(1 << 20))
    e = ledger.append("segment_stored", payload=data)
    assert e.seq == 1
    assert e.prev_hash == ledger.entry(0).entry_hash
    assert e.payload_hash == hashlib.sha256(data).hexdigest()
    assert ledger.resolve(e.payload_ref).read_bytes() == data


def test_identical_payloads(ledger):
    a = ledger.append("segment_stored", payload=b"same")
    b = ledger.append("segment_stored", payload=b"same")
    assert a.payload_hash == b.payload_hash
    assert a.entry_hash != b.entry_hash


def test_append_by_reference(ledger, tmp_path):
    art = tmp_path / "artifact.bin"
    art.write_bytes(b"artifact")
    e = ledger.append("report_emitted", ref=art)
    assert e.payload_hash == hashlib.sha256(b"artifact").hexdigest()
    assert ledger.verify().ok


def test_reload_sees_same_chain(ledger):
    ledger.append("analysis_run", detail={"x": 1})
    again = Ledger(ledger.path)
    assert again.entries == ledger.entries


def _chain(ledger, n=5):
    for i in range(n):
        ledger.append("segment_stored", payload=f"segment {i}".encode(), detail={"idx": i})
    return ledger


def test_append_to_tampered_refused(ledger):
    _chain(ledger, 3)
    lines = ledger.path.read_text().splitlines(True)
    tampered = lines[2].replace('\\"idx\\":1', '\\"idx\\":9')
    assert tampered != lines[2]
    lines[2] = tampered
    ledger.path.write_text("".join(lines))
    with pytest.raises(ChainBroken):
        ledger.append("analysis_run")


def test_verify_untouched(ledger):
    _chain(ledger)
    assert str(ledger.verify()) == "Ok"


def test_verify_payload_flip(ledger):
    _chain(ledger)
    target = ledger.resolve(ledger.entry(3).payload_ref)
    data = bytearray(target.read_bytes())
    data[0] ^= 0x01
    target.write_bytes(bytes(data))
    v = ledger.verify()
    assert v.first_bad_seq == 3
    assert str(v).startswith("FirstBadSeq(3)")


def test_verify_splice(ledger):
    _chain(ledger)
    lines = ledger.path.read_bytes().split(b"\n")
    del lines[2]
    ledger.path.write_bytes(b"\n".join(lines))
    assert ledger.verify().first_bad_seq == 2


def test_verify_hex_case_flip(ledger):
    _chain(ledger, 2)
    text = ledger.path.read_text()
    h = ledger.entry(1).payload_hash
    ledger.path.write_text(text.replace(h, h.upper(), 1))
    assert ledger.verify().first_bad_seq == 1


def test_verify_is_read_only(ledger):
    _chain(ledger, 2)
    before = ledger.path.read_bytes()
    assert ledger.verify() == ledger.verify()
    assert ledger.path.read_bytes() == before


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_any_single_bit_mutation_detected(tmp_path_factory, data):
    root = tmp_path_factory.mktemp("mut")
    ledger = _chain(Ledger.create(root / "l.jsonl", make_baseline()), 3)
    files = [ledger.path] + [ledger.resolve(e.payload_ref) for e in ledger.entries if e.payload_ref]
    target = data.draw(st.sampled_from(files))
    blob = bytearray(target.read_bytes())
    pos = data.draw(st.integers(0, len(blob) - 1))
    blob[pos] ^= 1 << data.draw(st.integers(0, 7))
    target.write_bytes(bytes(blob))
    assert not ledger.verify().ok


def test_suspend_resume(ledger):
    entry, token = ledger.suspend({"offset": 1234}, b"state")
    assert entry.action == "suspended"
    assert token not in ledger.path.read_text()
    susp, cursor, snap = ledger.resume(token)
    assert (susp.seq, cursor, snap) == (entry.seq, {"offset": 1234}, b"state")
    assert [e.seq for e in ledger.entries] == list(range(len(ledger)))
    assert ledger.tail.action == "resumed"
    assert ledger.verify().ok


def test_resume_wrong_token(ledger):
    ledger.suspend({"offset": 0})
    with pytest.raises(BadResumeToken):
        ledger.resume("0" * 32)


def test_resume_never_suspended(ledger):
    with pytest.raises(BadResumeToken):
        ledger.resume("anything")


def test_resume_twice_refused(ledger):
    _, token = ledger.suspend({"offset": 0})
    ledger.resume(token)
    with pytest.raises(BadResumeToken):
        ledger.resume(token)


def test_mirror_equivalence(ledger, tmp_path):
    e = ledger.append("segment_stored", payload=b"segment bytes")
    copy = MirrorSink(tmp_path / "mirror").store(ledger.resolve(e.payload_ref))
    m = ledger.append("segment_mirrored", ref=copy, detail={"primary": e.seq})
    assert m.payload_hash == e.payload_hash
    assert ledger.verify().ok


# iteration diffs ------------------------------------------------------


def _item(local, start, end, count=4):
    return {
        "session_id": "S00001",
        "local": local,
        "remote": "62.140.137.15:3478",
        "start_offset": start,
        "end_offset": end,
        "binding_count": count,
    }


def test_identical_runs():
    run = [_item("192.168.2.2:45000", "23.990789", "25.808196")]
    d = diff_iterations(run, [dict(run[0], session_id="S00007")])
    assert len(d.identical) == 1 and not d.differing
    assert d.report_allowed


def test_added_session_blocks_until_annotated():
    a = [_item("192.168.2.2:45000", "23.990789", "25.808196")]
    extra = _item("192.168.2.2:45001", "90.000000", "95.000000")
    d = diff_iterations(a, a + [extra])
    assert d.added == ["192.168.2.2:45001->62.140.137.15:3478@90.000000"]
    assert not d.report_allowed
    d.annotate(d.added[0], "second capture covered a later call")
    assert d.report_allowed


def test_changed_field_delta():
    a = [_item("192.168.2.2:45000", "23.990789", "25.808196")]
    b = [_item("192.168.2.2:45000", "23.990789", "26.411000", 5)]
    d = diff_iterations(a, b)
    (key, delta), = d.changed
    assert delta == {"binding_count": (4, 5), "end_offset": ("25.808196", "26.411000")}


@given(
    st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2)), max_size=6),
    st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2)), max_size=6),
)
def test_diff_partitions_union(xs, ys):
    run_a = [_item("192.168.2.2:45000", str(s), "0", c) for s, c in dict(xs).items()]
    run_b = [_item("192.168.2.2:45000", str(s), "0", c) for s, c in dict(ys).items()]
    d = diff_iterations(run_a, run_b)
    parts = d.identical + d.added + d.removed + [k for k, _ in d.changed]
    keys = {f"192.168.2.2:45000->62.140.137.15:3478@{s}" for s in dict(xs).keys() | dict(ys).keys()}
    assert sorted(parts) == sorted(keys)
    assert len(parts) == len(set(parts))


def test_annotations_recorded_in_ledger(ledger):
    a = [_item("192.168.2.2:45000", "23.990789", "25.808196")]
    d = diff_iterations(a, [], run_ids=(1, 2))
    e = ledger.append("iteration_diff", payload=json.dumps(d.to_dict()).encode(), detail={"kind": "diff"})
    assert unexplained_differences(ledger) == {e.seq: d.removed}
    ledger.append(
        "iteration_diff",
        detail={"kind": "annotation", "diff_seq": e.seq, "item": d.removed[0], "text": "capture ended early"},
    )
    (_, got), = recorded_diffs(ledger)
    assert got.annotations == {d.removed[0]: "capture ended early"}
    assert unexplained_differences(ledger) == {}


def test_entry_digest_depends_on_every_field(ledger):
    base = {k: getattr(ledger.entry(0), k) for k in FIELDS}
    ref = entry_digest(base)
    for name in FIELDS[:-1]:
        changed = dict(base, **{name: str(base[name]) + "x"})
        assert entry_digest(changed) != ref
