"""Small shared helpers: UTC timestamps, hashing, deterministic file output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence


def ensure_utc(dt: datetime) -> datetime:
    """Return ``dt`` in UTC; naive datetimes are rejected."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime; timezone-aware UTC timestamps required")
    return dt.astimezone(timezone.utc)


def parse_iso_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp ('Z' or explicit offset; bare means UTC)."""
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def iso_utc(dt: datetime) -> str:
    dt = ensure_utc(dt)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + "Z"


def compact_ts(dt: datetime) -> str:
    """Filesystem-safe rendering of a UTC timestamp (second resolution)."""
    return ensure_utc(dt).strftime("%Y%m%dT%H%M%SZ")


def floor_bin(dt: datetime, interval_s: int) -> datetime:
    """Align ``dt`` down to the enclosing epoch-aligned bin start."""
    epoch = math.floor(ensure_utc(dt).timestamp() / interval_s) * interval_s
    return datetime.fromtimestamp(epoch, tz=timezone.utc)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_stem(ts: datetime, content_hash: str) -> str:
    """Canonical archive file stem: <compact timestamp>_<12-hex hash prefix>."""
    return f"{compact_ts(ts)}_{content_hash[:12]}"


def clamped_mean(values: Sequence[float]) -> float:
    """Arithmetic mean, clamped into [min, max] of the inputs.

    The exact mean always lies in that interval; the final float division
    can land one ulp outside it, so clamp to keep the invariant literal.
    """
    if not values:
        raise ValueError("mean of empty sequence")
    mean = math.fsum(values) / len(values)
    return min(max(mean, min(values)), max(values))


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero (non-negative input)."""
    return int(math.floor(x + 0.5))


def write_json(path: Path, obj) -> None:
    """Serialize ``obj`` deterministically (sorted keys, trailing newline)."""
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
