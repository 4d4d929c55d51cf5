"""Run configuration shared by the pipeline and the command line."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .sessions import DEFAULT_EXCLUDED, AddressPolicy
from .timefmt import NS, parse_iso_ns, parse_seconds

CONFIG_ENV = "WIRETRACE_CONFIG"
STORAGE_FIELDS = ("ledger", "mirror", "reports")


@dataclass
class RunConfig:
    exclude: List[str] = field(default_factory=lambda: list(DEFAULT_EXCLUDED))
    subjects: List[str] = field(default_factory=list)
    external: List[str] = field(default_factory=list)
    session_gap: float = 10.0
    reorder_tolerance: float = 1.0
    clock_skew_tolerance: float = 5.0
    theta: float = 0.8
    offline_timeout: int = 300
    alternation_gap: int = 60
    tz_offset: int = 0  # minutes east of UTC
    # None: capture ts fields are absolute Unix time; otherwise ISO-8601 or seconds added to them
    epoch: Optional[str] = None
    segment_bytes: int = 64 * 1024 * 1024
    segment_seconds: float = 60.0
    ledger: str = "case/ledger.jsonl"
    mirror: Optional[str] = None
    reports: str = "case/reports"

    @property
    def policy(self) -> AddressPolicy:
        return AddressPolicy.from_cidrs(self.exclude)

    @property
    def gap_ns(self) -> int:
        return round(self.session_gap * NS)

    @property
    def reorder_ns(self) -> int:
        return round(self.reorder_tolerance * NS)

    @property
    def tolerance_ns(self) -> int:
        return round(self.clock_skew_tolerance * NS)

    def epoch_ns(self) -> int:
        if self.epoch is None:
            return 0
        text = str(self.epoch)
        try:
            return parse_seconds(text)
        except ValueError:
            return parse_iso_ns(text)

    @property
    def clock(self) -> dict:
        if self.epoch is None:
            return {"base": "raw_ts", "epoch_ns": 0}
        return {"base": "operator", "epoch_ns": self.epoch_ns()}

    def to_dict(self) -> dict:
        return asdict(self)

    def analysis_params(self) -> dict:
        """The fields that can change analysis output; storage paths excluded."""
        return {k: v for k, v in asdict(self).items() if k not in STORAGE_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: Optional[str] = None) -> RunConfig:
    """Config from ``path``, else the file named by ``$WIRETRACE_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
