"""Command-line interface: prepare -> acquire -> analyse -> report.

Exit codes::

    0  success
    1  unexpected error
    2  usage error
    3  input error (missing/unreadable capture or log, not a capture file)
    4  ledger integrity failure (verify failed, chain broken)
    5  report blocked (unverified ledger or unexplained differences)
    6  bad resume token
    7  case locked by another process
    8  refused: ledger already exists
    9  missing data (pair member absent, no absolute clock base)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import RunConfig, load_config
from .correlate import correlate, greedy_deviation, narrate, optimal_total
from .errors import (
    BadResumeToken,
    CaptureError,
    ChainBroken,
    ClockBaseMissing,
    LedgerExists,
    LedgerLocked,
    ReportBlocked,
    SourceVanished,
    UnsortedInput,
)
from .ledger import (
    BaselineRecord,
    Ledger,
    LedgerLock,
    canonical_json,
    diff_iterations,
    recorded_diffs,
    unexplained_differences,
)
from .pipeline import Follower, RunResult, narrate_report, report_bytes, run_batch, session_from_dict
from .presence import copresence, read_observation_log, reconstruct_intervals, routine_histogram
from .sessions import LITERAL_FILTER

log = logging.getLogger("wiretrace")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_INTEGRITY = 4
EXIT_BLOCKED = 5
EXIT_TOKEN = 6
EXIT_LOCKED = 7
EXIT_EXISTS = 8
EXIT_MISSING = 9

CASE_REPORT_SCHEMA = "wiretrace.case-report/1"
CORRELATION_SCHEMA = "wiretrace.correlation-report/1"
PRESENCE_SCHEMA = "wiretrace.presence-report/1"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _envelope(doc: dict) -> dict:
    return {
        "envelope": {
            "emitted_at": datetime.now(timezone.utc).isoformat(timespec="microseconds"),
            "tool": f"wiretrace {__version__}",
        },
        "report": doc,
    }


def _write_doc(directory: Path, stem: str, doc: dict, narrative: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(_envelope(doc), indent=2, sort_keys=True) + "\n")
    (directory / f"{stem}.txt").write_text(narrative)
    return json_path


def _open_ledger(cfg: RunConfig, required: bool = True) -> Optional[Ledger]:
    path = Path(cfg.ledger)
    if not path.exists():
        if required:
            raise CliError(f"no ledger at {path}; run 'wiretrace init' first", EXIT_INPUT)
        return None
    return Ledger(path)


def _lock(cfg: RunConfig):
    return LedgerLock(Path(cfg.ledger))


# commands ----------------------------------------------------------------


def cmd_init(args, cfg: RunConfig) -> int:
    fields = {
        "case_id": args.case_id,
        "investigator": args.investigator,
        "method_description": args.method,
        "environment_description": args.environment,
        "legal_reference": args.legal_reference,
    }
    if sys.stdin.isatty() and not args.no_prompt:
        for name, value in fields.items():
            if not value:
                fields[name] = input(f"{name.replace('_', ' ')}: ").strip()
    missing = [k for k, v in fields.items() if not (v or "").strip()]
    if missing:
        raise CliError(f"baseline incomplete, missing: {', '.join(missing)}", EXIT_USAGE)
    path = Path(cfg.ledger)
    if path.exists():
        raise CliError(f"refusing to overwrite existing ledger {path}", EXIT_EXISTS)
    ledger = Ledger.create(path, BaselineRecord(**fields), args.digest)
    print(f"ledger created: {path} (baseline entry {ledger.tail.entry_hash})")
    return EXIT_OK


def _session_report_files(cfg: RunConfig, result: RunResult) -> Path:
    rep = result.report()
    return _write_doc(Path(cfg.reports), f"{result.source_id}.session-report", rep, narrate_report(rep))


def cmd_analyze(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    with _lock(cfg):
        try:
            result = run_batch(args.capture, cfg, ledger, args.source_id)
        except OSError as exc:
            raise CliError(f"cannot read capture: {exc}", EXIT_INPUT) from None
        except CaptureError as exc:
            raise CliError(f"{type(exc).__name__}: {exc}", EXIT_INPUT) from None
    out = _session_report_files(cfg, result)
    print(result.narrative(), end="")
    print(f"report: {out} (analysis run {result.run_entry})")
    return EXIT_OK


class _StopFlag:
    def __init__(self):
        self.stop = False

    def __call__(self, signum, frame):
        self.stop = True


def _follow_loop(follower: Follower, args, cfg: RunConfig) -> int:
    flag = _StopFlag()
    for sig in (signal.SIGINT, signal.SIGTERM, signal.SIGUSR1):
        signal.signal(sig, flag)
    polls = 0
    while not flag.stop:
        for s in follower.poll():
            print(f"sealed {s.session_id}: {s.local} -> {s.remote}, {s.binding_count} binding requests", flush=True)
        polls += 1
        if args.finish_when_idle and follower.drained and polls > 1:
            result = follower.finish()
            out = _session_report_files(cfg, result)
            print(f"report: {out} (analysis run {result.run_entry})")
            return EXIT_OK
        if args.max_polls and polls >= args.max_polls:
            break
        time.sleep(args.poll_interval)
    token = follower.suspend()
    print(f"suspended at byte {follower.offset}; resume token: {token}", flush=True)
    return EXIT_OK


def cmd_follow(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    with _lock(cfg):
        follower = Follower(args.capture, cfg, ledger, args.idle_gap, args.source_id)
        try:
            return _follow_loop(follower, args, cfg)
        except SourceVanished as exc:
            raise CliError(str(exc), EXIT_INPUT) from None


def cmd_resume(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    with _lock(cfg):
        try:
            follower = Follower.resume(ledger, args.token, cfg, args.capture, args.idle_gap)
        except BadResumeToken as exc:
            raise CliError(str(exc), EXIT_TOKEN) from None
        except SourceVanished as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
        return _follow_loop(follower, args, cfg)


def cmd_suspend(args, cfg: RunConfig) -> int:
    lock = Path(str(cfg.ledger) + ".lock")
    try:
        pid = int(lock.read_text())
    except (OSError, ValueError):
        raise CliError("no follow process holds this case", EXIT_INPUT) from None
    os.kill(pid, signal.SIGUSR1)
    print(f"suspend requested from process {pid}; it prints the resume token")
    return EXIT_OK


def _load_report(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read report {path}: {exc}", EXIT_INPUT) from None
    return doc.get("report", doc)


def _report_epoch(rep: dict, name: str):
    clock = rep.get("clock") or {}
    if clock.get("epoch_ns") is None:
        raise ClockBaseMissing(f"report {name} has no absolute clock base")
    return clock["epoch_ns"]


def cmd_correlate(args, cfg: RunConfig) -> int:
    rep_a, rep_b = _load_report(args.report_a), _load_report(args.report_b)
    try:
        epoch_a, epoch_b = _report_epoch(rep_a, "A"), _report_epoch(rep_b, "B")
    except ClockBaseMissing as exc:
        raise CliError(str(exc), EXIT_MISSING) from None
    sa = [session_from_dict(d) for d in rep_a["sessions"]]
    sb = [session_from_dict(d) for d in rep_b["sessions"]]
    ext_a = args.external_a or rep_a.get("config", {}).get("external", [])
    ext_b = args.external_b or rep_b.get("config", {}).get("external", [])
    matches = correlate(sa, sb, cfg.tolerance_ns, cfg.theta, epoch_a, epoch_b, ext_a, ext_b)
    optimum = optimal_total(sa, sb, cfg.tolerance_ns, epoch_a, epoch_b)
    deviation = greedy_deviation(matches, optimum)
    doc = {
        "schema": CORRELATION_SCHEMA,
        "sources": [rep_a.get("source"), rep_b.get("source")],
        "parameters": {"clock_skew_tolerance": cfg.clock_skew_tolerance, "theta": cfg.theta,
                       "external_a": sorted(ext_a), "external_b": sorted(ext_b)},
        "matches": [
            {
                "session_a": m.session_a,
                "session_b": m.session_b,
                "time_offset": round(m.time_offset, 9),
                "applied_shift": round(m.applied_shift, 9),
                "overlap": m.overlap,
                "ip_crossmatch": m.ip_crossmatch.value,
                "confidence": m.confidence.value,
                "narrative": narrate(m),
            }
            for m in matches
        ],
        "assignment": {"greedy_total": sum(m.overlap for m in matches), "optimal_total": optimum,
                       "greedy_is_optimal": deviation <= 1e-12},
    }
    narrative = "\n".join(m["narrative"] for m in doc["matches"]) or "no matching sessions"
    if not doc["assignment"]["greedy_is_optimal"]:
        narrative += f"\nnote: greedy assignment falls {deviation:.6f} short of the optimal total overlap"
    out = _write_doc(Path(cfg.reports), args.name or "correlation", doc, narrative + "\n")
    ledger = _open_ledger(cfg, required=False)
    if ledger is not None:
        with _lock(cfg):
            ledger.append("analysis_run", payload=report_bytes(doc),
                          detail={"kind": "correlate", "status": "ok", "inputs": [args.report_a, args.report_b],
                                  "config": cfg.to_dict()})
    print(narrative)
    print(f"report: {out}")
    return EXIT_OK


def _interval_dicts(intervals):
    return [{"start": iv.start, "end": iv.end, "uncertain": iv.uncertain} for iv in intervals]


def cmd_presence(args, cfg: RunConfig) -> int:
    try:
        with open(args.log, newline="") as fh:
            per = read_observation_log(fh)
    except OSError as exc:
        raise CliError(f"cannot read observation log: {exc}", EXIT_INPUT) from None
    except ValueError as exc:
        raise CliError(f"bad observation log: {exc}", EXIT_INPUT) from None
    if args.pair:
        absent = [s for s in args.pair if s not in per]
        if absent:
            raise CliError(f"pair member absent from log: {', '.join(absent)}", EXIT_MISSING)
    subjects = {}
    intervals = {}
    for subject, obs in per.items():
        try:
            ivs = reconstruct_intervals(obs, cfg.offline_timeout)
        except UnsortedInput as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
        intervals[subject] = ivs
        prof = routine_histogram(ivs, cfg.tz_offset, subject)
        subjects[subject] = {
            "intervals": _interval_dicts(ivs),
            "hourly_activity": list(prof.hourly_activity),
            "observation_span": [obs[0].ts, obs[-1].ts] if obs else None,
        }
    pairs = [tuple(args.pair)] if args.pair else [
        (a, b) for i, a in enumerate(sorted(intervals)) for b in sorted(intervals)[i + 1:]
    ]
    matrix = []
    for a, b in pairs:
        c = copresence(intervals[a], intervals[b], cfg.alternation_gap)
        matrix.append({"a": a, "b": b, "joint_seconds": c.joint_seconds, "jaccard": c.jaccard,
                       "alternation_count": c.alternation_count})
    doc = {
        "schema": PRESENCE_SCHEMA,
        "parameters": {"offline_timeout": cfg.offline_timeout, "tz_offset": cfg.tz_offset,
                       "alternation_gap": cfg.alternation_gap},
        "subjects": subjects,
        "copresence": matrix,
        "notes": ["co-presence is suggestive of interaction, not proof of it",
                  "intervals closed by timeout are flagged uncertain"],
    }
    lines = [f"{s}: {len(v['intervals'])} online intervals, {sum(v['hourly_activity'])} s online"
             for s, v in subjects.items()]
    lines += [f"{m['a']} / {m['b']}: joint {m['joint_seconds']} s, jaccard {m['jaccard']:.4f}, "
              f"{m['alternation_count']} alternations" for m in matrix]
    narrative = "\n".join(lines) + "\n" if lines else "empty observation log\n"
    out = _write_doc(Path(cfg.reports), args.name or "presence", doc, narrative)
    ledger = _open_ledger(cfg, required=False)
    if ledger is not None:
        with _lock(cfg):
            ledger.append("analysis_run", ref=Path(args.log),
                          detail={"kind": "presence", "status": "ok", "config": cfg.to_dict(),
                                  "report_hash": ledger.digest(report_bytes(doc))})
    print(narrative, end="")
    print(f"report: {out}")
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    verdict = ledger.verify()
    print(verdict)
    return EXIT_OK if verdict else EXIT_INTEGRITY


def _run_report(ledger: Ledger, seq: int) -> List[dict]:
    try:
        entry = ledger.entry(seq)
    except IndexError:
        raise CliError(f"no ledger entry {seq}", EXIT_INPUT) from None
    if entry.action != "analysis_run" or entry.details.get("status") != "ok" or not entry.payload_ref:
        raise CliError(f"entry {seq} is not a successful analysis run", EXIT_INPUT)
    return json.loads(ledger.read_payload(entry))["sessions"]


def cmd_diff(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    with _lock(cfg):
        diff = diff_iterations(_run_report(ledger, args.run_a), _run_report(ledger, args.run_b),
                               run_ids=(args.run_a, args.run_b))
        entry = ledger.append(
            "iteration_diff",
            payload=canonical_json(diff.to_dict()).encode(),
            detail={"kind": "diff", "run_a": args.run_a, "run_b": args.run_b,
                    "identical": len(diff.identical), "added": len(diff.added),
                    "removed": len(diff.removed), "changed": len(diff.changed)},
        )
    print(f"diff {entry.seq}: {len(diff.identical)} identical, {len(diff.added)} added, "
          f"{len(diff.removed)} removed, {len(diff.changed)} changed")
    for k in diff.added:
        print(f"  added   {k}")
    for k in diff.removed:
        print(f"  removed {k}")
    for k, delta in diff.changed:
        print(f"  changed {k}: " + ", ".join(f"{f}: {a} -> {b}" for f, (a, b) in delta.items()))
    if diff.differing:
        print("differences must be annotated before a report can be emitted")
    return EXIT_OK


def cmd_annotate(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    diffs = recorded_diffs(ledger)
    if not diffs:
        raise CliError("no recorded diffs to annotate", EXIT_INPUT)
    if args.diff is None:
        entry, diff = diffs[-1]
    else:
        found = [d for d in diffs if d[0].seq == args.diff]
        if not found:
            raise CliError(f"entry {args.diff} is not a recorded diff", EXIT_INPUT)
        entry, diff = found[0]
    if args.item not in diff.differing:
        raise CliError(f"{args.item!r} is not a differing item of diff {entry.seq}", EXIT_INPUT)
    if not args.text.strip():
        raise CliError("annotation text is empty", EXIT_USAGE)
    with _lock(cfg):
        ledger.append("iteration_diff",
                      detail={"kind": "annotation", "diff_seq": entry.seq, "item": args.item, "text": args.text})
    print(f"annotated {args.item} in diff {entry.seq}")
    return EXIT_OK


def build_case_report(ledger: Ledger) -> dict:
    verdict = ledger.verify()
    if not verdict:
        raise ReportBlocked(f"ledger does not verify: {verdict}")
    pending = unexplained_differences(ledger)
    if pending:
        items = "; ".join(f"diff {seq}: {', '.join(keys)}" for seq, keys in sorted(pending.items()))
        raise ReportBlocked(f"unexplained differences: {items}")
    baseline = ledger.entries[0].details["baseline"]
    runs = [
        {"seq": e.seq, "ts": e.ts, "actor": e.actor, "kind": e.details.get("kind", "capture"),
         "source": e.details.get("source"), "status": e.details.get("status"),
         "payload_hash": e.payload_hash, "sessions": e.details.get("sessions")}
        for e in ledger.find("analysis_run")
    ]
    segments = [
        {"seq": e.seq, "action": e.action, "payload_hash": e.payload_hash, **e.details}
        for e in ledger.entries if e.action in ("segment_stored", "segment_mirrored")
    ]
    diffs = [{"seq": entry.seq, **diff.to_dict()} for entry, diff in recorded_diffs(ledger)]
    return {
        "schema": CASE_REPORT_SCHEMA,
        "baseline": baseline,
        "ledger": {"entries": len(ledger), "tail_hash": ledger.tail.entry_hash, "digest": ledger.algo},
        "analysis_runs": runs,
        "segments": segments,
        "iteration_diffs": diffs,
        "suspensions": [e.seq for e in ledger.find("suspended")],
    }


def _case_narrative(doc: dict) -> str:
    b = doc["baseline"]
    lines = [
        f"Case {b['case_id']}: investigator {b['investigator']}",
        f"legal basis: {b['legal_reference']}",
        f"method: {b['method_description']}",
        f"environment: {b['environment_description']}",
        f"ledger: {doc['ledger']['entries']} entries, tail {doc['ledger']['tail_hash']}",
    ]
    for r in doc["analysis_runs"]:
        lines.append(f"run {r['seq']} ({r['kind']}, {r['status']}): {r['source'] or ''} sessions={r['sessions']}")
    for d in doc["iteration_diffs"]:
        lines.append(f"diff {d['seq']} (runs {d['run_a']} vs {d['run_b']}): "
                     f"{len(d['identical'])} identical, {len(d['added'])} added, "
                     f"{len(d['removed'])} removed, {len(d['changed'])} changed")
        for item, text in d["annotations"].items():
            lines.append(f"  {item}: {text}")
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg: RunConfig) -> int:
    ledger = _open_ledger(cfg)
    with _lock(cfg):
        try:
            doc = build_case_report(ledger)
        except ReportBlocked as exc:
            raise CliError(str(exc), EXIT_BLOCKED) from None
        out = _write_doc(Path(cfg.reports), "case-report", doc, _case_narrative(doc))
        ledger.append("report_emitted", ref=out, detail={"kind": "case-report"})
    print(_case_narrative(doc), end="")
    print(f"report: {out}")
    return EXIT_OK


# argument parsing -------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wiretrace", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=__doc__.split("\n", 1)[1])
    p.add_argument("--config", help="JSON config file (default: $WIRETRACE_CONFIG)")
    p.add_argument("--ledger", help="ledger file (default: case/ledger.jsonl)")
    p.add_argument("--reports", help="report directory (default: case/reports)")
    p.add_argument("--mirror", help="second storage directory for segments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="open a case ledger with its baseline record")
    s.add_argument("--case-id")
    s.add_argument("--investigator")
    s.add_argument("--method", help="method description")
    s.add_argument("--environment", help="environment description")
    s.add_argument("--legal-reference")
    s.add_argument("--digest", default="sha256")
    s.add_argument("--no-prompt", action="store_true")
    s.set_defaults(func=cmd_init)

    def analysis_opts(s):
        s.add_argument("--exclude", action="append", metavar="CIDR",
                       help="excluded (private) range; repeatable, replaces the default set")
        s.add_argument("--literal-filter", action="store_true",
                       help=f"exclude only {LITERAL_FILTER[0]}")
        s.add_argument("--subject", action="append", metavar="IP", help="subject address (local side)")
        s.add_argument("--external", action="append", metavar="IP", help="subject's external address")
        s.add_argument("--session-gap", type=float, help="seconds (default 10)")
        s.add_argument("--reorder-tolerance", type=float, help="seconds (default 1)")
        s.add_argument("--epoch", help="absolute time of capture t=0 (ISO-8601 or seconds)")
        s.add_argument("--source-id")

    s = sub.add_parser("analyze", help="batch-analyze a capture file")
    s.add_argument("capture")
    analysis_opts(s)
    s.set_defaults(func=cmd_analyze)

    def follow_opts(s):
        s.add_argument("--poll-interval", type=float, default=0.5)
        s.add_argument("--idle-gap", type=float, help="wall seconds without growth before sealing")
        s.add_argument("--max-polls", type=int, default=0, help="suspend after this many polls")
        s.add_argument("--finish-when-idle", action="store_true",
                       help="finish and report once the file stops growing")

    s = sub.add_parser("follow", help="tail-follow a growing capture")
    s.add_argument("capture")
    analysis_opts(s)
    follow_opts(s)
    s.set_defaults(func=cmd_follow)

    s = sub.add_parser("resume", help="resume a suspended follow run")
    s.add_argument("token")
    s.add_argument("--capture", help="capture path if it moved")
    analysis_opts(s)
    follow_opts(s)
    s.set_defaults(func=cmd_resume)

    s = sub.add_parser("suspend", help="ask the running follow process to suspend")
    s.set_defaults(func=cmd_suspend)

    s = sub.add_parser("correlate", help="match sessions across two session reports")
    s.add_argument("report_a")
    s.add_argument("report_b")
    s.add_argument("--tolerance", type=float, help="clock skew tolerance, seconds (default 5)")
    s.add_argument("--theta", type=float, help="overlap threshold (default 0.8)")
    s.add_argument("--external-a", action="append", default=[], metavar="IP")
    s.add_argument("--external-b", action="append", default=[], metavar="IP")
    s.add_argument("--name", help="report file stem")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("presence", help="activity routines from an observation log")
    s.add_argument("log")
    s.add_argument("--pair", nargs=2, metavar=("A", "B"))
    s.add_argument("--offline-timeout", type=int)
    s.add_argument("--tz-offset", type=int, help="minutes east of UTC")
    s.add_argument("--alternation-gap", type=int)
    s.add_argument("--name", help="report file stem")
    s.set_defaults(func=cmd_presence)

    s = sub.add_parser("verify", help="check the ledger chain and payload digests")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("diff", help="compare two analysis runs")
    s.add_argument("run_a", type=int)
    s.add_argument("run_b", type=int)
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("annotate", help="explain a difference")
    s.add_argument("item")
    s.add_argument("text")
    s.add_argument("--diff", type=int, help="diff entry seq (default: latest)")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("report", help="emit the consolidated case report")
    s.set_defaults(func=cmd_report)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for flag, attr in (("ledger", "ledger"), ("reports", "reports"), ("mirror", "mirror"),
                       ("session_gap", "session_gap"), ("reorder_tolerance", "reorder_tolerance"),
                       ("epoch", "epoch"), ("tolerance", "clock_skew_tolerance"), ("theta", "theta"),
                       ("offline_timeout", "offline_timeout"), ("tz_offset", "tz_offset"),
                       ("alternation_gap", "alternation_gap")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "literal_filter", False):
        cfg.exclude = list(LITERAL_FILTER)
    if getattr(args, "exclude", None):
        cfg.exclude = list(args.exclude)
    if getattr(args, "subject", None):
        cfg.subjects = list(args.subject)
    if getattr(args, "external", None):
        cfg.external = list(args.external)
    cfg.policy  # validate CIDRs early
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"wiretrace: {exc}", file=sys.stderr)
        return exc.code
    except LedgerLocked as exc:
        print(f"wiretrace: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    except LedgerExists as exc:
        print(f"wiretrace: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except ChainBroken as exc:
        print(f"wiretrace: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ValueError as exc:
        print(f"wiretrace: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
