"""Fixed-point rendering of integer-nanosecond timestamps."""

from __future__ import annotations

from datetime import datetime, timezone

NS = 1_000_000_000


def seconds_str(ns: int, min_digits: int = 6) -> str:
    """``23990789000`` -> ``"23.990789"``; never goes through float."""
    sign = "-" if ns < 0 else ""
    whole, frac = divmod(abs(ns), NS)
    digits = f"{frac:09d}".rstrip("0")
    digits = digits.ljust(min_digits, "0")
    return f"{sign}{whole}.{digits}"


def parse_seconds(text: str) -> int:
    """Inverse of :func:`seconds_str`."""
    text = text.strip()
    sign = -1 if text.startswith("-") else 1
    whole, _, frac = text.lstrip("+-").partition(".")
    if len(frac) > 9:
        raise ValueError(f"more than nanosecond precision: {text!r}")
    return sign * (int(whole or "0") * NS + int(frac.ljust(9, "0") or "0"))


def iso_ns(ns: int) -> str:
    """UTC ISO-8601 with as many fractional digits as the value needs (min 6)."""
    whole, frac = divmod(ns, NS)
    base = datetime.fromtimestamp(whole, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    digits = f"{frac:09d}".rstrip("0").ljust(6, "0")
    return f"{base}.{digits}Z"


def parse_iso_ns(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    frac_digits = ""
    head = text
    if "." in text:
        head, rest = text.split(".", 1)
        i = 0
        while i < len(rest) and rest[i].isdigit():
            i += 1
        frac_digits, tail = rest[:i], rest[i:]
        head += tail
    dt = datetime.fromisoformat(head)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    whole = int(dt.timestamp())
    if len(frac_digits) > 9:
        raise ValueError(f"more than nanosecond precision: {text!r}")
    return whole * NS + int(frac_digits.ljust(9, "0") or "0")
