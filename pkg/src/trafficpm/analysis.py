"""Particulate-matter ingestion and the traffic/PM correlation.

Sensor rows are screened on the way in: rows that cannot be trusted at all
(unparseable timestamp, non-numeric or negative concentrations, relative
humidity outside 0..100, missing location) are dropped and tallied by
reason; rows where PM2.5 reads below PM1 are physically suspect but still
usable for PM1 work, so they are kept and only flagged.

The correlation pairs, per day, the mean vehicle count against the mean
PM1 excess of the roadside sensor over the background sensor. Days can be
excluded from the headline coefficient by date; the all-days coefficient
is always reported alongside for transparency.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

from . import util
from .aggregation import BinCounts
from .errors import ParseError, UndefinedCorrelationError

PM_HEADER = ["timestamp", "location_id", "pm1_ugm3", "pm25_ugm3", "rh_pct", "temp_c"]

BOXPLOT_HEADER = ["date", "location_id", "channel", "min", "q1", "median", "q3", "max", "n"]
SCATTER_HEADER = ["date", "mean_count", "delta_pm1_ugm3"]


@dataclass(frozen=True)
class PmRow:
    timestamp: datetime
    location_id: str
    pm1: float
    pm25: float
    rh: float
    temp: float
    flagged: bool = False  # pm25 < pm1


@dataclass
class PmParseResult:
    rows: list[PmRow]
    total_rows: int
    dropped: dict[str, int]
    flagged: int

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def parse_pm_csv(path: str | Path) -> PmParseResult:
    """Read a sensor export, dropping untrustworthy rows and tallying why."""
    path = Path(path)
    rows: list[PmRow] = []
    dropped: dict[str, int] = {}
    flagged = 0
    total = 0

    def drop(reason: str) -> None:
        dropped[reason] = dropped.get(reason, 0) + 1

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PM_HEADER:
            raise ParseError(f"{path}: unexpected sensor header {header}")
        for row in reader:
            if not row:
                continue
            total += 1
            if len(row) != len(PM_HEADER):
                drop("wrong_field_count")
                continue
            ts_text, location_id, pm1_text, pm25_text, rh_text, temp_text = row
            try:
                ts = util.parse_iso_utc(ts_text)
            except ValueError:
                drop("bad_timestamp")
                continue
            if not location_id:
                drop("missing_location")
                continue
            try:
                pm1 = _parse_float(pm1_text)
                pm25 = _parse_float(pm25_text)
                rh = _parse_float(rh_text)
                temp = _parse_float(temp_text)
            except ValueError:
                drop("bad_number")
                continue
            if pm1 < 0.0 or pm25 < 0.0:
                drop("negative_pm")
                continue
            if rh < 0.0 or rh > 100.0:
                drop("rh_out_of_range")
                continue
            is_flagged = pm25 < pm1
            if is_flagged:
                flagged += 1
            rows.append(PmRow(ts, location_id, pm1, pm25, rh, temp, is_flagged))
    return PmParseResult(rows=rows, total_rows=total, dropped=dropped, flagged=flagged)


@dataclass(frozen=True)
class PmBin:
    location_id: str
    bin_start: datetime
    pm1_mean: float
    pm25_mean: float
    n: int


def bin_pm(rows: Sequence[PmRow], *, interval_s: int = 300) -> list[PmBin]:
    """Mean concentrations per location on the shared bin grid."""
    if interval_s < 60:
        raise ValueError(f"interval must be >= 60 s, got {interval_s}")
    grouped: dict[tuple[str, datetime], list[PmRow]] = {}
    for row in rows:
        key = (row.location_id, util.floor_bin(row.timestamp, interval_s))
        grouped.setdefault(key, []).append(row)
    out = []
    for (location_id, start) in sorted(grouped):
        members = grouped[(location_id, start)]
        out.append(
            PmBin(
                location_id=location_id,
                bin_start=start,
                pm1_mean=util.clamped_mean([m.pm1 for m in members]),
                pm25_mean=util.clamped_mean([m.pm25 for m in members]),
                n=len(members),
            )
        )
    return out


def five_number(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    """Min, lower quartile, median, upper quartile, max.

    Quartiles interpolate linearly between order statistics (the same
    convention as numpy's default percentile).
    """
    if not values:
        raise ValueError("five_number needs at least one value")
    xs = sorted(values)
    n = len(xs)

    def quantile(p: float) -> float:
        pos = (n - 1) * p
        lo = math.floor(pos)
        frac = pos - lo
        if lo + 1 < n:
            return xs[lo] + frac * (xs[lo + 1] - xs[lo])
        return xs[lo]

    return xs[0], quantile(0.25), quantile(0.5), quantile(0.75), xs[-1]


@dataclass(frozen=True)
class BoxplotRow:
    date: date
    location_id: str
    channel: str  # pm1_ugm3 or pm25_ugm3
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    n: int


def daily_boxplot_rows(bins: Sequence[PmBin]) -> list[BoxplotRow]:
    """Five-number summaries of the per-bin means, per day/location/channel."""
    grouped: dict[tuple[date, str], list[PmBin]] = {}
    for b in bins:
        grouped.setdefault((b.bin_start.date(), b.location_id), []).append(b)
    out = []
    for (day, location_id) in sorted(grouped):
        members = grouped[(day, location_id)]
        for channel, values in (
            ("pm1_ugm3", [m.pm1_mean for m in members]),
            ("pm25_ugm3", [m.pm25_mean for m in members]),
        ):
            lo, q1, med, q3, hi = five_number(values)
            out.append(BoxplotRow(day, location_id, channel, lo, q1, med, q3, hi, len(values)))
    return out


def write_boxplot_csv(path: str | Path, rows: Iterable[BoxplotRow]) -> None:
    ordered = sorted(rows, key=lambda r: (r.date, r.location_id, r.channel))
    util.write_csv(
        path,
        BOXPLOT_HEADER,
        [
            [
                r.date.isoformat(),
                r.location_id,
                r.channel,
                repr(r.minimum),
                repr(r.q1),
                repr(r.median),
                repr(r.q3),
                repr(r.maximum),
                r.n,
            ]
            for r in ordered
        ],
    )


@dataclass(frozen=True)
class DayPoint:
    date: date
    mean_count: float
    delta_pm1: float


@dataclass
class DayBuildResult:
    points: list[DayPoint]
    skipped: list[tuple[date, str]] = field(default_factory=list)


def build_day_points(
    count_bins: Sequence[BinCounts],
    pm_bins: Sequence[PmBin],
    *,
    roadside: str,
    background: str,
    interval_s: int = 300,
) -> DayBuildResult:
    """Pair each day's traffic with its PM1 roadside-minus-background excess.

    Only bins where both sensors reported are used for the excess; the
    day's traffic is averaged over count bins inside the span of those
    paired sensor bins, so both sides describe the same hours. Days with no
    paired sensor bins, or no camera coverage inside the span, are skipped
    with a reason.
    """
    l1: dict[date, dict[datetime, PmBin]] = {}
    l2: dict[date, dict[datetime, PmBin]] = {}
    for b in pm_bins:
        if b.location_id == roadside:
            l1.setdefault(b.bin_start.date(), {})[b.bin_start] = b
        elif b.location_id == background:
            l2.setdefault(b.bin_start.date(), {})[b.bin_start] = b

    counts_by_day: dict[date, list[BinCounts]] = {}
    for cb in count_bins:
        counts_by_day.setdefault(cb.bin_start.date(), []).append(cb)

    result = DayBuildResult(points=[])
    for day in sorted(set(l1) | set(l2)):
        a = l1.get(day, {})
        b = l2.get(day, {})
        paired = sorted(set(a) & set(b))
        if not paired:
            result.skipped.append((day, "no concurrent readings at both sensor locations"))
            continue
        deltas = [a[t].pm1_mean - b[t].pm1_mean for t in paired]
        delta = util.clamped_mean(deltas)
        window_start = paired[0]
        window_end = paired[-1] + timedelta(seconds=interval_s)
        day_counts = [
            cb.total_mean
            for cb in counts_by_day.get(day, [])
            if window_start <= cb.bin_start < window_end
        ]
        if not day_counts:
            result.skipped.append((day, "no camera coverage during the sensor window"))
            continue
        result.points.append(DayPoint(day, util.clamped_mean(day_counts), delta))
    return result


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation via compensated sums of residual products."""
    n = len(xs)
    if n != len(ys):
        raise ValueError(f"series lengths differ: {n} vs {len(ys)}")
    if n < 2:
        raise UndefinedCorrelationError(f"need at least 2 points, got {n}")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("a series is constant; correlation undefined")
    r = sxy / math.sqrt(sxx * syy)
    # rounding can push |r| a hair past 1
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationReport:
    r: float
    r_all_days: float
    n_days: int
    excluded_dates: list[date]
    points: list[DayPoint]


def correlate_days(points: Sequence[DayPoint], exclude_dates: Iterable[date] = ()) -> CorrelationReport:
    """Headline r over non-excluded days, plus r over every day."""
    excluded = sorted(set(exclude_dates))
    included = [p for p in points if p.date not in excluded]
    if len(included) < 2:
        raise UndefinedCorrelationError(
            f"only {len(included)} usable day(s) after exclusions; need at least 2"
        )
    r = pearson_r([p.mean_count for p in included], [p.delta_pm1 for p in included])
    r_all = pearson_r([p.mean_count for p in points], [p.delta_pm1 for p in points])
    return CorrelationReport(
        r=r,
        r_all_days=r_all,
        n_days=len(included),
        excluded_dates=[d for d in excluded if any(p.date == d for p in points)],
        points=list(points),
    )


def write_scatter_csv(path: str | Path, points: Iterable[DayPoint]) -> None:
    ordered = sorted(points, key=lambda p: p.date)
    util.write_csv(
        path,
        SCATTER_HEADER,
        [[p.date.isoformat(), repr(p.mean_count), repr(p.delta_pm1)] for p in ordered],
    )


def write_report_json(path: str | Path, report: CorrelationReport) -> None:
    payload = {
        "r": report.r,
        "r_all_days": report.r_all_days,
        "n_days": report.n_days,
        "excluded_dates": [d.isoformat() for d in report.excluded_dates],
        "days": [
            {
                "date": p.date.isoformat(),
                "mean_count": p.mean_count,
                "delta_pm1_ugm3": p.delta_pm1,
            }
            for p in sorted(report.points, key=lambda p: p.date)
        ],
    }
    util.write_json(path, payload)
