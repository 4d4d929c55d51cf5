"""Exit criteria of the build, one or more tests per criterion.

The terminal summary prints a PASS/FAIL line per criterion (see conftest).
"""

import io
import ipaddress
import json
import os
import random
import time
import tracemalloc

import pytest

from conftest import LOCALS, PUBLIC_PEERS, make_baseline, random_scenario
from oracles import grid_best_iou, group_sessions, hour_bins, presence_seconds, seconds_to_intervals
from wiretrace.capture import Endpoint, NotUdp, PacketRecord, UdpDatagram, decapsulate, iter_packets
from wiretrace.cli import EXIT_BLOCKED, EXIT_OK, main
from wiretrace.config import RunConfig
from wiretrace.correlate import Confidence, correlate
from wiretrace.fixture import TRACE_TIMES, FixtureEvent, FixtureSpec, trace_spec, gen_fixture
from wiretrace.ledger import Ledger
from wiretrace.pipeline import Follower, run_batch
from wiretrace.presence import (
    PresenceObservation,
    State,
    copresence,
    reconstruct_intervals,
    routine_histogram,
)
from wiretrace.sessions import DEFAULT_EXCLUDED, LITERAL_FILTER, AddressPolicy, reconstruct
from wiretrace.stun import BindingEvent, NotStun, StunMessage, decode_stun
from wiretrace.timefmt import NS

C1 = "Reference call trace"
C2 = "Filter semantics"
C3 = "Streaming/batch equivalence"
C4 = "Session oracle"
C5 = "Correlation"
C6 = "Ledger tamper evidence"
C7 = "Presence oracle"
C8 = "Parser robustness"
C9 = "Report gating"


class FrozenClock:
    def __call__(self):
        return 0.0


# 1 ----------------------------------------------------------------------


@pytest.mark.acceptance(1, C1)
def test_trace_fixture_frames():
    data = gen_fixture(trace_spec())
    packets = list(iter_packets(io.BytesIO(data)))
    assert [rec.captured_len for _, rec in packets] == [86] * 4
    assert [rec.ts_ns for _, rec in packets] == [int(t.replace(".", "")) * 1000 for t in TRACE_TIMES]
    for meta, rec in packets:
        d = decapsulate(rec, meta)
        assert (str(d.src.ip), str(d.dst.ip)) == ("192.168.2.2", "62.140.137.15")
        assert decode_stun(d.payload).msg_type == 0x0001


@pytest.mark.acceptance(1, C1)
def test_trace_analyze(tmp_path, trace_path):
    base = ["--ledger", str(tmp_path / "case" / "l.jsonl"), "--reports", str(tmp_path / "r")]
    assert main(base + ["init", "--case-id", "c", "--investigator", "i", "--method", "m",
                        "--environment", "e", "--legal-reference", "l"]) == EXIT_OK
    t0 = time.perf_counter()
    assert main(base + ["analyze", str(trace_path)]) == EXIT_OK
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "r" / "trace.pcap.session-report.json").read_text())["report"]
    (s,) = rep["sessions"]
    assert s["binding_count"] == 4
    assert s["start_offset"] == "23.990789"
    assert s["end_offset"] == "25.808196"
    assert abs(float(s["duration"]) - 1.817407) <= 1e-6
    assert s["remote"].rsplit(":", 1)[0] == "62.140.137.15"
    assert elapsed < 1.0


# 2 ----------------------------------------------------------------------


def _random_destinations(rng, n):
    pool = PUBLIC_PEERS + ["10.0.0.1", "10.20.30.40", "172.16.5.4", "172.31.255.1", "192.168.1.5",
                           "100.64.0.9", "100.127.1.1", "127.0.0.1", "169.254.3.3", "8.8.4.4"]
    out = []
    for _ in range(n):
        if rng.random() < 0.5:
            out.append(rng.choice(pool))
        else:
            out.append(str(ipaddress.IPv4Address(rng.getrandbits(32))))
    return out


@pytest.mark.acceptance(2, C2)
@pytest.mark.parametrize("exclude", [list(DEFAULT_EXCLUDED), list(LITERAL_FILTER)])
def test_no_excluded_remote_10k(tmp_path, exclude):
    rng = random.Random(2)
    events = []
    t = 0
    for dst in _random_destinations(rng, 10_000):
        t += rng.randint(1, 3_000) * 1_000_000
        events.append(FixtureEvent(t, f"{rng.choice(LOCALS)}:{rng.choice([45000, 45001])}", f"{dst}:3478"))
    p = tmp_path / "many.pcap"
    p.write_bytes(gen_fixture(FixtureSpec(events=tuple(events))))
    t0 = time.perf_counter()
    result = run_batch(p, RunConfig(exclude=exclude))
    elapsed = time.perf_counter() - t0
    nets = [ipaddress.ip_network(c) for c in exclude]
    assert result.sessions
    assert not any(s.remote.ip in n for s in result.sessions for n in nets)
    expected_filtered = sum(
        1 for e in events if any(ipaddress.ip_address(e.dst.rsplit(":", 1)[0]) in n for n in nets)
    )
    assert result.stats["filtered_private"] == expected_filtered
    assert result.stats["admitted"] == 10_000 - expected_filtered
    assert elapsed < 5.0


@pytest.mark.acceptance(2, C2)
def test_literal_filter_examples():
    policy = AddressPolicy.from_cidrs(LITERAL_FILTER)

    def ev(dst):
        return BindingEvent(0, Endpoint.parse("192.168.2.2:45000"), Endpoint.parse(dst), 86, 24, b"\0" * 12)

    assert [len(reconstruct([ev(d)], policy)) for d in ("10.0.0.1:3478", "192.168.1.5:3478")] == [1, 0]


# 3 ----------------------------------------------------------------------


def _session_set(result):
    return [
        (s.session_id, str(s.local), str(s.remote), s.start_ns, s.end_ns, s.binding_count, s.handover_from)
        for s in result.sessions
    ]


@pytest.mark.acceptance(3, C3)
def test_follow_suspend_resume_equals_batch(tmp_path):
    rng = random.Random(3)
    t0 = time.perf_counter()
    for n in range(100):
        root = tmp_path / f"c{n}"
        data = gen_fixture(random_scenario(rng))
        cuts = sorted(rng.randint(0, len(data)) for _ in range(3))
        p = root / "live.pcap"
        root.mkdir()
        p.write_bytes(data[: cuts[0]])
        ledger = Ledger.create(root / "case" / "l.jsonl", make_baseline())
        f = Follower(p, RunConfig(), ledger, clock=FrozenClock())
        f.poll()
        with open(p, "ab") as fh:
            fh.write(data[cuts[0]: cuts[1]])
        f.poll()
        token = f.suspend()
        with open(p, "ab") as fh:
            fh.write(data[cuts[1]: cuts[2]])
        g = Follower.resume(ledger, token, RunConfig(), clock=FrozenClock())
        g.poll()
        with open(p, "ab") as fh:
            fh.write(data[cuts[2]:])
        followed = g.finish()
        batch = run_batch(p)
        assert _session_set(followed) == _session_set(batch), f"file {n}"
        assert followed.report() == batch.report()
        assert ledger.verify().ok
    assert time.perf_counter() - t0 < 60.0


# 4 ----------------------------------------------------------------------


@pytest.mark.acceptance(4, C4)
def test_exhaustive_grouping_oracle():
    rng = random.Random(4)
    locals_ = [("192.168.2.2", 45000), ("192.168.2.2", 45001), ("192.168.2.3", 45000)]
    remotes = [(ip, 3478) for ip in PUBLIC_PEERS[:2]] + [("192.168.1.5", 3478), ("100.64.0.1", 3478)]
    for _ in range(3000):
        n = rng.randint(0, 20)
        gap = rng.choice([1, 3, 10]) * NS
        times = sorted(rng.randint(0, 60) * NS // 2 for _ in range(n))
        raw = [(t, *rng.choice(locals_), *rng.choice(remotes)) for t in times]
        events = [
            BindingEvent(t, Endpoint.parse(f"{si}:{sp}"), Endpoint.parse(f"{di}:{dp}"), 86, 24, b"\0" * 12)
            for t, si, sp, di, dp in raw
        ]
        got = sorted(
            ((str(s.local.ip), s.local.port), (str(s.remote.ip), s.remote.port), s.start_ns, s.end_ns, s.binding_count)
            for s in reconstruct(events, AddressPolicy.default(), gap)
        )
        assert got == group_sessions(raw, DEFAULT_EXCLUDED, gap)


# 5 ----------------------------------------------------------------------

EXT_A, EXT_B = "85.12.40.7", "62.140.137.15"


def _call_capture(local, remote, times_ds):
    """Keepalives at the given times (in tenths of a second)."""
    events = tuple(FixtureEvent(t * NS // 10, local, remote) for t in times_ds)
    return gen_fixture(FixtureSpec(events=events))


def _two_ended(rng, tmp_path, shift_ds=0):
    start = rng.randint(0, 10**6)  # tenths of a second
    length = rng.randint(300, 6000)
    times_a = list(range(start, start + length + 1, 20))
    if times_a[-1] != start + length:
        times_a.append(start + length)
    # offset 0.5 s plus per-packet jitter in [-0.2, 0.2] s on the 0.1 s grid
    times_b = [t + 5 + rng.randint(-2, 2) + shift_ds for t in times_a]
    times_b.sort()
    a = tmp_path / "a.pcap"
    b = tmp_path / "b.pcap"
    a.write_bytes(_call_capture("192.168.2.2:45000", f"{EXT_B}:3478", times_a))
    b.write_bytes(_call_capture("192.168.9.9:45000", f"{EXT_A}:3478", times_b))
    return a, b, (times_a[0] / 10, times_a[-1] / 10), (times_b[0] / 10, times_b[-1] / 10)


@pytest.mark.acceptance(5, C5)
def test_two_ended_call_matches(tmp_path):
    rng = random.Random(5)
    for _ in range(40):
        a, b, span_a, span_b = _two_ended(rng, tmp_path)
        sa = run_batch(a, RunConfig(external=[EXT_A])).sessions
        sb = run_batch(b, RunConfig(external=[EXT_B])).sessions
        matches = correlate(sa, sb, 5 * NS, 0.8, external_a=[EXT_A], external_b=[EXT_B])
        assert len(matches) == 1
        (m,) = matches
        assert m.overlap >= 0.95
        assert m.confidence is Confidence.HIGH
        assert abs(m.overlap - grid_best_iou(span_a, span_b, 5, 0.1)) <= 1e-6


@pytest.mark.acceptance(5, C5)
def test_hour_shift_no_match(tmp_path):
    rng = random.Random(55)
    for _ in range(20):
        a, b, _, _ = _two_ended(rng, tmp_path, shift_ds=36000)
        sa, sb = run_batch(a).sessions, run_batch(b).sessions
        assert correlate(sa, sb, 5 * NS, 0.8, external_a=[EXT_A], external_b=[EXT_B]) == []


# 6 ----------------------------------------------------------------------


@pytest.mark.acceptance(6, C6)
def test_random_single_bit_mutations(tmp_path):
    rng = random.Random(6)
    ledger = Ledger.create(tmp_path / "case" / "l.jsonl", make_baseline())
    for i in range(49):
        if i % 3 == 2:
            ledger.append("analysis_run", detail={"i": i})
        else:
            ledger.append("segment_stored", payload=os.urandom(rng.randint(1, 2048)), detail={"i": i})
    assert len(ledger) == 50
    assert ledger.verify().ok

    owners = {}
    for e in ledger.entries:
        if e.payload_ref:
            owners.setdefault(ledger.resolve(e.payload_ref), e.seq)
    targets = [(ledger.path, None)] + sorted(owners.items())
    line_starts = []
    pos = 0
    for line in ledger.path.read_bytes().split(b"\n")[:-1]:
        line_starts.append(pos)
        pos += len(line) + 1

    detected = 0
    for _ in range(1000):
        path, owner = rng.choice(targets)
        original = path.read_bytes()
        at = rng.randrange(len(original))
        blob = bytearray(original)
        blob[at] ^= 1 << rng.randrange(8)
        path.write_bytes(bytes(blob))
        try:
            verdict = ledger.verify()
        finally:
            path.write_bytes(original)
        mutated = owner if owner is not None else max(i for i, s in enumerate(line_starts) if s <= at)
        if verdict.first_bad_seq is not None and verdict.first_bad_seq <= mutated:
            detected += 1
    assert detected == 1000
    assert ledger.verify().ok


# 7 ----------------------------------------------------------------------


def _random_observations(rng, subject):
    n = rng.randint(0, 10)
    times = sorted(rng.randint(0, 5000) for _ in range(n))
    out = []
    for t in times:
        state = rng.choice(["online", "online", "offline", "last_seen"])
        out.append(PresenceObservation(subject, t, State(state), t - rng.randint(0, 30) if state == "last_seen" else None))
    return out


def _as_oracle(obs):
    return [(o.ts, "online" if o.state is State.ONLINE else "off") for o in obs]


@pytest.mark.acceptance(7, C7)
def test_presence_per_second_oracle():
    rng = random.Random(7)
    for _ in range(2000):
        timeout = rng.choice([30, 300, 900])
        tz = rng.choice([0, 60, -300, 330])
        a = _random_observations(rng, "0031621444833")
        b = _random_observations(rng, "0031621440487")
        sa = presence_seconds(_as_oracle(a), timeout)
        sb = presence_seconds(_as_oracle(b), timeout)
        ia = reconstruct_intervals(a, timeout)
        ib = reconstruct_intervals(b, timeout)
        assert [(i.start, i.end) for i in ia] == seconds_to_intervals(sa)
        assert list(routine_histogram(ia, tz).hourly_activity) == hour_bins(sa, tz)
        c = copresence(ia, ib)
        assert c.joint_seconds == len(sa & sb)
        union = len(sa | sb)
        assert abs(c.jaccard - (len(sa & sb) / union if union else 0.0)) <= 1e-9


# 8 ----------------------------------------------------------------------


@pytest.mark.acceptance(8, C8)
def test_fuzz_decoders():
    rng = random.Random(8)
    (meta, rec), *_ = iter_packets(io.BytesIO(gen_fixture(trace_spec())))
    metas = [meta.__class__(meta.byte_order, meta.ts_resolution, lt, meta.snap_len) for lt in (1, 101, 113)]
    tracemalloc.start()
    try:
        for i in range(100_000):
            if i % 2:
                # mutated real frame: reaches the deep parsing paths
                blob = bytearray(rec.data)
                for _ in range(rng.randint(1, 4)):
                    blob[rng.randrange(len(blob))] = rng.randrange(256)
                data = bytes(blob[: rng.randint(0, len(blob))])
            else:
                data = rng.randbytes(rng.randint(0, 600))
            m = metas[i % 3] if i % 4 == 0 else meta
            base = tracemalloc.get_traced_memory()[0]
            tracemalloc.reset_peak()
            out = decapsulate(PacketRecord(0, 0, len(data), data), m)
            grew = tracemalloc.get_traced_memory()[1] - base
            assert isinstance(out, (UdpDatagram, NotUdp))
            assert grew <= 2 * len(data) + 4096
            payload = out.payload if isinstance(out, UdpDatagram) else data
            tracemalloc.reset_peak()
            msg = decode_stun(payload)
            grew = tracemalloc.get_traced_memory()[1] - base
            assert isinstance(msg, (StunMessage, NotStun))
            assert grew <= 2 * (len(data) + len(payload)) + 4096
            del out, msg, payload
    finally:
        tracemalloc.stop()


# 9 ----------------------------------------------------------------------


@pytest.mark.acceptance(9, C9)
def test_report_gated_on_annotation(tmp_path, trace_path):
    base = ["--ledger", str(tmp_path / "case" / "l.jsonl"), "--reports", str(tmp_path / "r")]
    assert main(base + ["init", "--case-id", "c", "--investigator", "i", "--method", "m",
                        "--environment", "e", "--legal-reference", "l"]) == EXIT_OK
    extra = tmp_path / "extra.pcap"
    extra.write_bytes(gen_fixture(FixtureSpec(events=trace_spec().events + (
        FixtureEvent("80.000000", "192.168.2.2:45000", "31.13.64.51:3478"),
    ))))
    assert main(base + ["analyze", str(trace_path)]) == EXIT_OK
    assert main(base + ["analyze", str(extra)]) == EXIT_OK
    runs = [e.seq for e in Ledger(tmp_path / "case" / "l.jsonl").find("analysis_run")]
    assert main(base + ["diff", str(runs[0]), str(runs[1])]) == EXIT_OK
    assert main(base + ["report"]) == EXIT_BLOCKED
    assert EXIT_BLOCKED not in (0, 1, 2)
    item = "192.168.2.2:45000->31.13.64.51:3478@80.000000"
    assert main(base + ["annotate", item, "session outside the first capture window"]) == EXIT_OK
    assert main(base + ["report"]) == EXIT_OK
