import random

import pytest

from wiretrace.config import RunConfig
from wiretrace.fixture import FixtureEvent, FixtureSpec, trace_spec, gen_fixture
from wiretrace.ledger import BaselineRecord, Ledger


@pytest.fixture
def trace_bytes():
    return gen_fixture(trace_spec())


@pytest.fixture
def trace_path(tmp_path, trace_bytes):
    p = tmp_path / "trace.pcap"
    p.write_bytes(trace_bytes)
    return p


def make_baseline(**kw):
    fields = dict(
        case_id="CASE-1",
        investigator="Investigator A",
        method_description="gateway capture of the subject handset",
        environment_description="clean virtual machine, firewall enabled",
        legal_reference="interception order 2026/17",
    )
    fields.update(kw)
    return BaselineRecord(**fields)


@pytest.fixture
def ledger(tmp_path):
    return Ledger.create(tmp_path / "case" / "ledger.jsonl", make_baseline())


@pytest.fixture
def config(tmp_path):
    return RunConfig(ledger=str(tmp_path / "case" / "ledger.jsonl"), reports=str(tmp_path / "case" / "reports"))


PUBLIC_PEERS = ["62.140.137.15", "85.12.40.7", "31.13.64.51", "157.240.1.53"]
LOCALS = ["192.168.2.2", "192.168.2.3"]


def random_scenario(rng: random.Random, n_events=None, peers=PUBLIC_PEERS, locals_=LOCALS):
    """Keepalive bursts between a few local/remote pairs, plus noise frames."""
    n_events = n_events if n_events is not None else rng.randint(0, 40)
    t = rng.randint(0, 1000) * 1_000_000
    events = []
    for _ in range(n_events):
        t += rng.choice([rng.randint(1, 900), rng.randint(1000, 30000)]) * 1_000_000
        src = f"{rng.choice(locals_)}:{rng.choice([45000, 45001])}"
        kind = rng.random()
        if kind < 0.75:
            dst = f"{rng.choice(peers)}:3478"
            events.append(FixtureEvent(t, src, dst))
        elif kind < 0.85:
            events.append(FixtureEvent(t, src, "192.168.1.5:3478"))
        elif kind < 0.92:
            events.append(FixtureEvent(t, src, f"{rng.choice(peers)}:3478", stun_type=0x0101))
        else:
            events.append(FixtureEvent(t, src, "8.8.8.8:53", payload=bytes(rng.randrange(256) for _ in range(30))))
    return FixtureSpec(events=tuple(events))


# acceptance summary -----------------------------------------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    prev = _ACCEPTANCE.get(number, (title, True))
    failed = report.failed or (report.when == "call" and report.skipped)
    _ACCEPTANCE[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number}. {title}")
