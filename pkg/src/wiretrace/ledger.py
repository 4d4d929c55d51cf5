"""Append-only, hash-chained chain-of-custody ledger.

File layout: one JSON object per line, keys in the fixed order of
``FIELDS``. ``entry_hash`` is the digest of the length-prefixed
concatenation of every other field in that order, and each entry's
``prev_hash`` is the previous ``entry_hash`` (64 zero hex digits for the
baseline entry). Payload bytes live next to the ledger under
``payloads/`` and are named by digest.

Verification re-serializes each parsed line and requires it to match the
stored bytes exactly, so even case changes in hex digits or inserted
whitespace count as tampering.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import shutil
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import (
    BadResumeToken,
    ChainBroken,
    EmptyBaselineField,
    LedgerExists,
    LedgerLocked,
)

FIELDS = (
    "seq",
    "prev_hash",
    "ts",
    "actor",
    "action",
    "payload_hash",
    "payload_ref",
    "detail",
    "entry_hash",
)
ACTIONS = (
    "baseline",
    "segment_stored",
    "segment_mirrored",
    "analysis_run",
    "report_emitted",
    "iteration_diff",
    "suspended",
    "resumed",
)
DEFAULT_DIGEST = "sha256"
GENESIS = "0" * 64


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class BaselineRecord:
    case_id: str
    investigator: str
    method_description: str
    environment_description: str
    legal_reference: str
    tool_version: str = ""
    started_at: str = field(default_factory=_now)

    def __post_init__(self):
        if not self.tool_version:
            from . import __version__

            object.__setattr__(self, "tool_version", f"wiretrace {__version__}")
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, str) or not value.strip():
                raise EmptyBaselineField(f"baseline field {f.name!r} is empty")


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    prev_hash: str
    ts: str
    actor: str
    action: str
    payload_hash: str
    payload_ref: str
    detail: str  # canonical JSON text
    entry_hash: str

    @property
    def details(self) -> Dict[str, Any]:
        return json.loads(self.detail)

    def to_line(self) -> str:
        return json.dumps({k: getattr(self, k) for k in FIELDS}, separators=(",", ":"), ensure_ascii=True)


def entry_digest(values: Dict[str, Any], algo: str = DEFAULT_DIGEST) -> str:
    h = hashlib.new(algo)
    for name in FIELDS[:-1]:
        raw = str(values[name]).encode("utf-8")
        h.update(len(raw).to_bytes(8, "big"))
        h.update(raw)
    return h.hexdigest()


@dataclass(frozen=True)
class Verdict:
    """Outcome of :meth:`Ledger.verify`; truthy when the ledger is intact."""

    first_bad_seq: Optional[int] = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.first_bad_seq is None

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "Ok" if self.ok else f"FirstBadSeq({self.first_bad_seq}): {self.reason}"


class LedgerLock:
    """Exclusive per-case lock file; one command process at a time."""

    def __init__(self, ledger_path: Path):
        self.path = Path(str(ledger_path) + ".lock")
        self.fd: Optional[int] = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            raise LedgerLocked(f"ledger locked by another process ({self.path})") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
            self.fd = None


class Ledger:
    def __init__(self, path, actor: str = ""):
        self.path = Path(path)
        self.root = self.path.parent
        self.payload_dir = self.root / "payloads"
        self.entries: List[LedgerEntry] = []
        self.algo = DEFAULT_DIGEST
        self.actor = actor
        self._reload()

    # construction -----------------------------------------------------

    @classmethod
    def create(cls, path, baseline: BaselineRecord, digest: str = DEFAULT_DIGEST) -> "Ledger":
        path = Path(path)
        if path.exists():
            raise LedgerExists(f"refusing to overwrite existing ledger {path}")
        hashlib.new(digest)  # unknown algorithm fails before anything is written
        path.parent.mkdir(parents=True, exist_ok=True)
        ledger = cls.__new__(cls)
        ledger.path = path
        ledger.root = path.parent
        ledger.payload_dir = ledger.root / "payloads"
        ledger.entries = []
        ledger.algo = digest
        ledger.actor = baseline.investigator
        body = canonical_json(asdict(baseline)).encode()
        ledger._write_entry("baseline", body, None, {"baseline": asdict(baseline), "digest": digest})
        return ledger

    def _reload(self) -> None:
        if not self.path.exists():
            raise FileNotFoundError(self.path)
        self.entries = []
        with open(self.path, "rb") as fh:
            for raw in fh.read().split(b"\n"):
                if not raw:
                    continue
                try:
                    d = json.loads(raw)
                    self.entries.append(LedgerEntry(**{k: d[k] for k in FIELDS}))
                except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                    break
        if self.entries:
            try:
                self.algo = self.entries[0].details.get("digest", DEFAULT_DIGEST)
                if not self.actor:
                    self.actor = self.entries[0].details["baseline"]["investigator"]
            except (ValueError, KeyError, AttributeError):
                pass

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tail(self) -> LedgerEntry:
        return self.entries[-1]

    # hashing ----------------------------------------------------------

    def digest(self, data: bytes) -> str:
        return hashlib.new(self.algo, data).hexdigest()

    def digest_file(self, path) -> str:
        h = hashlib.new(self.algo)
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.root / p

    def _ref_for(self, path: Path) -> str:
        path = Path(path).resolve()
        try:
            return path.relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)

    def read_payload(self, entry: LedgerEntry) -> bytes:
        if not entry.payload_ref:
            return b""
        data = self.resolve(entry.payload_ref).read_bytes()
        if self.digest(data) != entry.payload_hash:
            raise ChainBroken(f"payload of entry {entry.seq} does not match its digest")
        return data

    # writing ----------------------------------------------------------

    def _store_payload(self, data: bytes) -> Tuple[str, str]:
        h = self.digest(data)
        self.payload_dir.mkdir(parents=True, exist_ok=True)
        target = self.payload_dir / f"{h}.bin"
        if not target.exists():
            tmp = target.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        return h, self._ref_for(target)

    def _write_entry(self, action, payload, ref, detail) -> LedgerEntry:
        if action not in ACTIONS:
            raise ValueError(f"unknown ledger action {action!r}")
        if payload is not None:
            payload_hash, payload_ref = self._store_payload(payload)
        elif ref is not None:
            payload_hash, payload_ref = self.digest_file(ref), self._ref_for(ref)
        else:
            payload_hash, payload_ref = self.digest(b""), ""
        values = {
            "seq": len(self.entries),
            "prev_hash": self.entries[-1].entry_hash if self.entries else GENESIS,
            "ts": _now(),
            "actor": self.actor or "unknown",
            "action": action,
            "payload_hash": payload_hash,
            "payload_ref": payload_ref,
            "detail": canonical_json(detail or {}),
        }
        values["entry_hash"] = entry_digest(values, self.algo)
        entry = LedgerEntry(**values)
        # flush-before-ack: the entry is on disk before the caller sees it
        with open(self.path, "ab") as fh:
            fh.write(entry.to_line().encode("ascii") + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.entries.append(entry)
        return entry

    def append(
        self,
        action: str,
        payload: Optional[bytes] = None,
        ref=None,
        detail: Optional[Dict[str, Any]] = None,
    ) -> LedgerEntry:
        """Chain a new entry onto the verified tail.

        ``payload`` bytes are stored under ``payloads/``; alternatively
        ``ref`` names an existing artifact file to hash in place.
        """
        self._reload()
        verdict = self.verify(check_payloads=False)
        if not verdict:
            raise ChainBroken(f"refusing to append: {verdict}")
        return self._write_entry(action, payload, ref, detail)

    # verification -----------------------------------------------------

    def verify(self, check_payloads: bool = True) -> Verdict:
        """Recompute every link and digest; report the lowest inconsistent seq."""
        try:
            raw = self.path.read_bytes()
        except OSError as exc:
            return Verdict(0, f"ledger unreadable: {exc}")
        lines = raw.split(b"\n")
        trailing = lines.pop()
        prev = GENESIS
        algo = self.algo
        for n, line in enumerate(lines):
            try:
                d = json.loads(line.decode("ascii"))
                entry = LedgerEntry(**{k: d[k] for k in FIELDS})
            except (ValueError, KeyError, TypeError, UnicodeDecodeError, AttributeError):
                return Verdict(n, "unparseable entry")
            if entry.to_line().encode("ascii") != line:
                return Verdict(n, "entry not in canonical form")
            if n == 0:
                try:
                    algo = json.loads(entry.detail).get("digest", DEFAULT_DIGEST)
                    hashlib.new(algo)
                except (ValueError, AttributeError):
                    return Verdict(0, "baseline names no usable digest")
            if entry.seq != n or entry.action not in ACTIONS:
                return Verdict(n, "sequence or action invalid")
            if entry.prev_hash != prev:
                return Verdict(n, "prev_hash does not link to previous entry")
            if entry_digest(asdict(entry), algo) != entry.entry_hash:
                return Verdict(n, "entry_hash mismatch")
            if check_payloads:
                bad = self._check_payload(entry, algo)
                if bad:
                    return Verdict(n, bad)
            prev = entry.entry_hash
        if trailing:
            return Verdict(len(lines), "unterminated trailing data")
        if not lines:
            return Verdict(0, "empty ledger")
        return Verdict()

    def _check_payload(self, entry: LedgerEntry, algo: str) -> str:
        if not entry.payload_ref:
            if entry.payload_hash != hashlib.new(algo, b"").hexdigest():
                return "payload_hash set without payload"
            return ""
        path = self.resolve(entry.payload_ref)
        try:
            h = hashlib.new(algo)
            with open(path, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
        except OSError:
            return f"payload {entry.payload_ref} unreachable"
        if h.hexdigest() != entry.payload_hash:
            return f"payload {entry.payload_ref} digest mismatch"
        return ""

    # queries ----------------------------------------------------------

    def find(self, action: str) -> List[LedgerEntry]:
        return [e for e in self.entries if e.action == action]

    def entry(self, seq: int) -> LedgerEntry:
        return self.entries[seq]

    # suspend / resume -------------------------------------------------

    def suspend(self, cursor: Dict[str, Any], snapshot: bytes = b"") -> Tuple[LedgerEntry, str]:
        """Record pipeline state; returns the entry and a secret resume token."""
        token = secrets.token_hex(16)
        detail = {
            "cursor": cursor,
            "token_digest": self.digest(token.encode()),
            "snapshot_hash": self.digest(snapshot),
        }
        entry = self.append("suspended", payload=snapshot, detail=detail)
        return entry, token

    def pending_suspension(self) -> Optional[LedgerEntry]:
        for e in reversed(self.entries):
            if e.action == "resumed":
                return None
            if e.action == "suspended":
                return e
        return None

    def resume(self, token: str) -> Tuple[LedgerEntry, Dict[str, Any], bytes]:
        """Check ``token`` against the open suspension and chain a resumed entry.

        Returns the suspension entry, its cursor and the state snapshot.
        """
        self._reload()
        susp = self.pending_suspension()
        if susp is None:
            raise BadResumeToken("ledger has no open suspension")
        detail = susp.details
        if not hmac.compare_digest(self.digest(token.encode()), detail["token_digest"]):
            raise BadResumeToken("resume token does not match the suspension record")
        snapshot = self.read_payload(susp)
        self.append("resumed", detail={"suspension": susp.seq})
        return susp, detail["cursor"], snapshot


def open_ledger(path, baseline: BaselineRecord, digest: str = DEFAULT_DIGEST) -> Ledger:
    return Ledger.create(path, baseline, digest)


class MirrorSink:
    """Second storage location for stored segments."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def store(self, src) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        dst = self.directory / Path(src).name
        shutil.copyfile(src, dst)
        with open(dst, "rb") as fh:
            os.fsync(fh.fileno())
        return dst


# iteration comparison ----------------------------------------------------


@dataclass
class IterationDiff:
    run_a: int
    run_b: int
    identical: List[str]
    added: List[str]
    removed: List[str]
    changed: List[Tuple[str, Dict[str, Tuple[Any, Any]]]]
    annotations: Dict[str, str] = field(default_factory=dict)

    @property
    def differing(self) -> List[str]:
        return sorted(self.added + self.removed + [k for k, _ in self.changed])

    def unexplained(self) -> List[str]:
        return [k for k in self.differing if not self.annotations.get(k, "").strip()]

    def annotate(self, item: str, text: str) -> None:
        if item not in self.differing:
            raise KeyError(f"{item!r} is not a differing item")
        self.annotations[item] = text

    @property
    def report_allowed(self) -> bool:
        return not self.unexplained()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_a": self.run_a,
            "run_b": self.run_b,
            "identical": self.identical,
            "added": self.added,
            "removed": self.removed,
            "changed": [{"item": k, "delta": {f: list(v) for f, v in d.items()}} for k, d in self.changed],
            "annotations": dict(sorted(self.annotations.items())),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "IterationDiff":
        return cls(
            d["run_a"],
            d["run_b"],
            list(d["identical"]),
            list(d["added"]),
            list(d["removed"]),
            [(c["item"], {f: tuple(v) for f, v in c["delta"].items()}) for c in d["changed"]],
            dict(d.get("annotations", {})),
        )


def session_key(item: Dict[str, Any]) -> str:
    return f"{item['local']}->{item['remote']}@{item['start_offset']}"


def diff_iterations(
    run_a: Sequence[Dict[str, Any]],
    run_b: Sequence[Dict[str, Any]],
    key: Callable[[Dict[str, Any]], str] = session_key,
    run_ids: Tuple[int, int] = (-1, -1),
    ignore: Iterable[str] = ("session_id", "handover_from"),
) -> IterationDiff:
    """Partition the union of both runs' items by identity ``key``."""
    ignore = set(ignore)
    a = {key(x): x for x in run_a}
    b = {key(x): x for x in run_b}
    identical, changed = [], []
    for k in sorted(a.keys() & b.keys()):
        fa, fb = a[k], b[k]
        delta = {
            f: (fa.get(f), fb.get(f))
            for f in sorted(set(fa) | set(fb))
            if f not in ignore and fa.get(f) != fb.get(f)
        }
        if delta:
            changed.append((k, delta))
        else:
            identical.append(k)
    return IterationDiff(
        run_ids[0],
        run_ids[1],
        identical,
        sorted(b.keys() - a.keys()),
        sorted(a.keys() - b.keys()),
        changed,
    )


def recorded_diffs(ledger: Ledger) -> List[Tuple[LedgerEntry, IterationDiff]]:
    """Every diff in the ledger with the annotations recorded against it."""
    diffs: Dict[int, Tuple[LedgerEntry, IterationDiff]] = {}
    for e in ledger.find("iteration_diff"):
        d = e.details
        if d.get("kind") == "diff":
            diffs[e.seq] = (e, IterationDiff.from_dict(json.loads(ledger.read_payload(e))))
        elif d.get("kind") == "annotation" and d.get("diff_seq") in diffs:
            diffs[d["diff_seq"]][1].annotations[d["item"]] = d["text"]
    return list(diffs.values())


def unexplained_differences(ledger: Ledger) -> Dict[int, List[str]]:
    out = {}
    for entry, diff in recorded_diffs(ledger):
        missing = diff.unexplained()
        if missing:
            out[entry.seq] = missing
    return out
