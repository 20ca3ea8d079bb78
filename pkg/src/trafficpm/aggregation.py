"""Turning per-image detections into time-binned vehicle counts.

Cameras capture irregularly, so a fixed wall-clock grid (default 300 s,
bins floored to the grid) carries the counts. A bin's value is the *mean*
per-image count over the images that landed in it, not the sum; a bin with
no images is simply absent. Cars, trucks and buses are counted;
motorcycles and any other labels are excluded from counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

from . import util
from .detection import ImageDetections
from .errors import ParseError

COUNTS_HEADER = ["camera_id", "bin_start", "n_images", "car", "truck", "bus", "total_mean"]


@dataclass(frozen=True)
class ImageCounts:
    car: int
    truck: int
    bus: int

    @property
    def total(self) -> int:
        return self.car + self.truck + self.bus


def count_vehicles(item: ImageDetections) -> ImageCounts:
    car = truck = bus = 0
    for det in item.detections:
        if det.label == "car":
            car += 1
        elif det.label == "truck":
            truck += 1
        elif det.label == "bus":
            bus += 1
    return ImageCounts(car, truck, bus)


@dataclass(frozen=True)
class BinCounts:
    camera_id: str
    bin_start: datetime
    n_images: int
    car: float
    truck: float
    bus: float
    total_mean: float


def bin_counts(
    items: Sequence[ImageDetections],
    camera_id: str,
    *,
    interval_s: int = 300,
) -> list[BinCounts]:
    """Mean per-image vehicle counts on the bin grid, for one camera."""
    if interval_s < 60:
        raise ValueError(f"interval must be >= 60 s, got {interval_s}")
    per_bin: dict[datetime, list[ImageCounts]] = {}
    for item in items:
        if item.camera_id != camera_id:
            continue
        start = util.floor_bin(item.image_timestamp, interval_s)
        per_bin.setdefault(start, []).append(count_vehicles(item))
    out = []
    for start in sorted(per_bin):
        counts = per_bin[start]
        out.append(
            BinCounts(
                camera_id=camera_id,
                bin_start=start,
                n_images=len(counts),
                car=util.clamped_mean([c.car for c in counts]),
                truck=util.clamped_mean([c.truck for c in counts]),
                bus=util.clamped_mean([c.bus for c in counts]),
                total_mean=util.clamped_mean([c.total for c in counts]),
            )
        )
    return out


def write_counts_csv(path: str | Path, rows: Iterable[BinCounts]) -> None:
    ordered = sorted(rows, key=lambda r: (r.camera_id, r.bin_start))
    util.write_csv(
        path,
        COUNTS_HEADER,
        [
            [
                r.camera_id,
                util.iso_utc(r.bin_start),
                r.n_images,
                repr(r.car),
                repr(r.truck),
                repr(r.bus),
                repr(r.total_mean),
            ]
            for r in ordered
        ],
    )


def read_counts_csv(path: str | Path) -> list[BinCounts]:
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COUNTS_HEADER:
            raise ParseError(f"{path}: unexpected counts header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(COUNTS_HEADER):
                raise ParseError(f"{path} line {lineno}: expected {len(COUNTS_HEADER)} fields")
            try:
                out.append(
                    BinCounts(
                        camera_id=row[0],
                        bin_start=util.parse_iso_utc(row[1]),
                        n_images=int(row[2]),
                        car=float(row[3]),
                        truck=float(row[4]),
                        bus=float(row[5]),
                        total_mean=float(row[6]),
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path} line {lineno}: {exc}") from exc
    return out
