"""Camera image retrieval and the local deduplicating archive.

The upstream repository serves a camera index per requested time plus one
image URL per camera. Cameras do not capture on a reliable cadence and the
API frequently re-serves an identical frame, so the archive deduplicates by
exact digest of the encoded bytes, per camera.

Every fetched response can be appended to a fetch log (one JSON object per
line); replaying a log against an archive reproduces the same record set,
which is also how hermetic tests and offline reruns work.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests
from PIL import Image

from .errors import (
    DecodeError,
    IntegrityError,
    ParseError,
    TransportError,
)
from . import util

logger = logging.getLogger(__name__)

LEDGER_NAME = "ledger.csv"
LEDGER_HEADER = ["camera_id", "image_timestamp", "content_hash", "fetched_at", "source_url"]
FETCH_LOG_NAME = "fetch_log.jsonl"

_IMAGE_EXTENSIONS = (".jpg", ".png", ".bin")


@dataclass(frozen=True)
class CameraIndexEntry:
    camera_id: str
    image_timestamp: datetime
    image_url: str
    width: int
    height: int
    md5: str | None = None


@dataclass(frozen=True)
class CameraIndex:
    """Parsed camera index; ``warnings`` counts entries dropped at parse."""

    retrieved_at: datetime
    entries: tuple[CameraIndexEntry, ...]
    warnings: int = 0


@dataclass(frozen=True, eq=False)
class TrafficImage:
    """One archived camera frame.

    ``content_hash`` is the SHA-256 of ``encoded`` (the bytes as served or,
    for derived frames, a deterministic PNG encoding); ``image_timestamp``
    is the repository-reported capture time, never the fetch time.
    """

    camera_id: str
    image_timestamp: datetime
    pixels: np.ndarray
    encoded: bytes
    content_hash: str

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_bytes(cls, camera_id: str, image_timestamp: datetime, data: bytes) -> "TrafficImage":
        """Decode served bytes; the hash covers the raw bytes before decoding."""
        content_hash = util.sha256_hex(data)
        try:
            with Image.open(io.BytesIO(data)) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise DecodeError(f"cannot decode image for camera {camera_id}: {exc}") from exc
        return cls(camera_id, util.ensure_utc(image_timestamp), pixels, data, content_hash)

    @classmethod
    def from_pixels(cls, camera_id: str, image_timestamp: datetime, pixels: np.ndarray) -> "TrafficImage":
        """Build a frame from a raster, encoding it losslessly (PNG)."""
        arr = np.ascontiguousarray(pixels, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("pixels must be an (H, W, 3) uint8 raster")
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG")
        data = buf.getvalue()
        return cls(camera_id, util.ensure_utc(image_timestamp), arr, data, util.sha256_hex(data))


@dataclass(frozen=True)
class LedgerRecord:
    camera_id: str
    image_timestamp: datetime
    content_hash: str
    fetched_at: datetime
    source_url: str

    @property
    def image_ref(self) -> str:
        """Archive-relative key for this record (without extension)."""
        return f"{self.camera_id}/{util.image_stem(self.image_timestamp, self.content_hash)}"


class InsertOutcome(Enum):
    INSERTED = "inserted"
    DUPLICATE = "duplicate"


def plan_schedule(start: datetime, end: datetime, interval_s: int = 300) -> list[datetime]:
    """Request timestamps start, start+interval, ... within [start, end).

    The plan is what we ask the repository for; actual image timestamps
    will differ because cameras do not capture on a fixed cadence.
    """
    start = util.ensure_utc(start)
    end = util.ensure_utc(end)
    if start >= end:
        raise ValueError(f"invalid schedule range: start {start} is not before end {end}")
    if interval_s != int(interval_s) or int(interval_s) < 60:
        raise ValueError(f"interval must be an integer >= 60 s, got {interval_s}")
    step = timedelta(seconds=int(interval_s))
    out = []
    t = start
    while t < end:
        out.append(t)
        t = t + step
    return out


def _http_get(url: str, *, api_key: str | None, timeout: float, retries: int, backoff: float) -> requests.Response:
    """GET with bounded retries on retryable failures (connection errors, 5xx, 429)."""
    headers = {"X-Api-Key": api_key} if api_key else {}
    attempt = 0
    while True:
        attempt += 1
        try:
            resp = requests.get(url, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            if attempt <= retries:
                time.sleep(backoff * (2 ** (attempt - 1)))
                continue
            raise TransportError(f"GET {url} failed: {exc}", retryable=True) from exc
        if resp.status_code == 200:
            return resp
        retryable = resp.status_code >= 500 or resp.status_code == 429
        if retryable and attempt <= retries:
            time.sleep(backoff * (2 ** (attempt - 1)))
            continue
        raise TransportError(f"GET {url} returned HTTP {resp.status_code}", retryable=retryable)


def parse_index_payload(data: bytes, *, retrieved_at: datetime) -> CameraIndex:
    """Parse the camera index JSON body.

    Entries missing a URL or camera id, or declaring non-positive
    dimensions, are dropped and tallied in ``warnings``. A camera id that
    appears more than once keeps its last occurrence.
    """
    try:
        payload = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"index payload is not UTF-8: {exc}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"index payload is not valid JSON: {exc.msg}", offset=exc.pos) from exc

    items = payload.get("items") if isinstance(payload, dict) else None
    if not isinstance(items, list):
        raise ParseError("index payload missing 'items' list", offset=0)

    warnings = 0
    by_camera: dict[str, CameraIndexEntry] = {}
    index_ts = retrieved_at
    for item in items:
        if not isinstance(item, dict):
            warnings += 1
            continue
        if isinstance(item.get("timestamp"), str):
            try:
                index_ts = util.parse_iso_utc(item["timestamp"])
            except ValueError:
                pass
        cameras = item.get("cameras")
        if not isinstance(cameras, list):
            warnings += 1
            continue
        for cam in cameras:
            entry = _parse_camera_entry(cam)
            if entry is None:
                warnings += 1
                continue
            by_camera[entry.camera_id] = entry
    entries = tuple(by_camera[cid] for cid in by_camera)
    return CameraIndex(retrieved_at=index_ts, entries=entries, warnings=warnings)


def _parse_camera_entry(cam) -> CameraIndexEntry | None:
    if not isinstance(cam, dict):
        return None
    camera_id = cam.get("camera_id")
    url = cam.get("image")
    ts = cam.get("timestamp")
    meta = cam.get("image_metadata") or {}
    if not camera_id or not isinstance(camera_id, str):
        return None
    if not url or not isinstance(url, str):
        return None
    try:
        image_timestamp = util.parse_iso_utc(ts)
    except (TypeError, ValueError):
        return None
    try:
        width = int(meta.get("width"))
        height = int(meta.get("height"))
    except (TypeError, ValueError):
        return None
    if width <= 0 or height <= 0:
        return None
    md5 = meta.get("md5") if isinstance(meta.get("md5"), str) else None
    return CameraIndexEntry(camera_id, image_timestamp, url, width, height, md5)


def fetch_index(
    endpoint: str,
    at: datetime,
    *,
    api_key: str | None = None,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.5,
) -> CameraIndex:
    """Retrieve the camera index for the given time."""
    at = util.ensure_utc(at)
    sep = "&" if "?" in endpoint else "?"
    url = f"{endpoint}{sep}date_time={util.iso_utc(at)}"
    resp = _http_get(url, api_key=api_key, timeout=timeout, retries=retries, backoff=backoff)
    return parse_index_payload(resp.content, retrieved_at=at)


def fetch_image(
    entry: CameraIndexEntry,
    *,
    api_key: str | None = None,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.5,
) -> TrafficImage:
    """Download one camera frame and verify it against the index entry."""
    resp = _http_get(entry.image_url, api_key=api_key, timeout=timeout, retries=retries, backoff=backoff)
    image = TrafficImage.from_bytes(entry.camera_id, entry.image_timestamp, resp.content)
    if image.width != entry.width or image.height != entry.height:
        raise IntegrityError(
            f"camera {entry.camera_id}: index declared {entry.width}x{entry.height} "
            f"but image decoded to {image.width}x{image.height}"
        )
    return image


def _sniff_extension(data: bytes) -> str:
    if data[:3] == b"\xff\xd8\xff":
        return ".jpg"
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return ".png"
    return ".bin"


class ImageArchive:
    """Append-only image store: a CSV ledger plus one file per frame.

    The ledger is the source of truth; image files are named
    ``<camera_id>/<timestamp>_<hash-prefix-12>.<ext>`` so the layout is
    human-auditable. Inserts are serialized; duplicates (same camera id and
    content hash) leave the archive untouched.
    """

    def __init__(self, root: str | Path, *, create: bool = True):
        self.root = Path(root)
        self._ledger_path = self.root / LEDGER_NAME
        self._lock = threading.Lock()
        self._records: list[LedgerRecord] = []
        self._by_key: dict[tuple[str, str], LedgerRecord] = {}
        if not self._ledger_path.exists():
            if not create:
                raise FileNotFoundError(f"no archive ledger at {self._ledger_path}")
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self._ledger_path, "w", newline="", encoding="utf-8") as fh:
                fh.write(",".join(LEDGER_HEADER) + "\n")
        else:
            self._load_ledger()

    def _load_ledger(self) -> None:
        with open(self._ledger_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LEDGER_HEADER:
                raise IntegrityError(f"{self._ledger_path}: unexpected ledger header {header}")
            for row in reader:
                if len(row) != len(LEDGER_HEADER):
                    raise IntegrityError(f"{self._ledger_path}: malformed ledger row {row}")
                rec = LedgerRecord(
                    camera_id=row[0],
                    image_timestamp=util.parse_iso_utc(row[1]),
                    content_hash=row[2],
                    fetched_at=util.parse_iso_utc(row[3]),
                    source_url=row[4],
                )
                self._records.append(rec)
                self._by_key[(rec.camera_id, rec.content_hash)] = rec

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[LedgerRecord]:
        return list(self._records)

    def insert(
        self,
        image: TrafficImage,
        *,
        fetched_at: datetime | None = None,
        source_url: str = "",
    ) -> tuple[InsertOutcome, LedgerRecord]:
        """Insert a frame unless an identical one is already archived."""
        fetched_at = util.ensure_utc(fetched_at) if fetched_at else datetime.now(tz=timezone.utc)
        with self._lock:
            key = (image.camera_id, image.content_hash)
            existing = self._by_key.get(key)
            if existing is not None:
                return InsertOutcome.DUPLICATE, existing
            rec = LedgerRecord(image.camera_id, image.image_timestamp, image.content_hash, fetched_at, source_url)
            cam_dir = self.root / image.camera_id
            cam_dir.mkdir(parents=True, exist_ok=True)
            stem = util.image_stem(image.image_timestamp, image.content_hash)
            (cam_dir / (stem + _sniff_extension(image.encoded))).write_bytes(image.encoded)
            with open(self._ledger_path, "a", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(
                    [
                        rec.camera_id,
                        util.iso_utc(rec.image_timestamp),
                        rec.content_hash,
                        util.iso_utc(rec.fetched_at),
                        rec.source_url,
                    ]
                )
            self._records.append(rec)
            self._by_key[key] = rec
            return InsertOutcome.INSERTED, rec

    def image_path(self, record: LedgerRecord) -> Path:
        stem = util.image_stem(record.image_timestamp, record.content_hash)
        cam_dir = self.root / record.camera_id
        for ext in _IMAGE_EXTENSIONS:
            path = cam_dir / (stem + ext)
            if path.exists():
                return path
        raise FileNotFoundError(f"archive file missing for record {record.image_ref}")

    def load_image(self, record: LedgerRecord) -> TrafficImage:
        data = self.image_path(record).read_bytes()
        return TrafficImage.from_bytes(record.camera_id, record.image_timestamp, data)


def dedup_insert(
    archive: ImageArchive,
    image: TrafficImage,
    *,
    fetched_at: datetime | None = None,
    source_url: str = "",
) -> InsertOutcome:
    """Insert ``image`` into ``archive``; duplicate iff the same (camera id,
    content hash) pair is already present."""
    outcome, _ = archive.insert(image, fetched_at=fetched_at, source_url=source_url)
    return outcome


def append_fetch_log(
    log_path: str | Path,
    *,
    camera_id: str,
    image_timestamp: datetime,
    source_url: str,
    fetched_at: datetime,
    body: bytes,
) -> None:
    """Record one fetched response (body base64-encoded) in the replay log."""
    rec = {
        "camera_id": camera_id,
        "image_timestamp": util.iso_utc(image_timestamp),
        "source_url": source_url,
        "fetched_at": util.iso_utc(fetched_at),
        "body_b64": base64.b64encode(body).decode("ascii"),
    }
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class ReplayStats:
    inserted: int = 0
    duplicates: int = 0
    errors: int = 0


def replay_fetch_log(log_path: str | Path, archive: ImageArchive) -> ReplayStats:
    """Replay a fetch log into the archive. Replay is idempotent: repeats
    come back as duplicates, so the record set matches a single playthrough."""
    stats = ReplayStats()
    with open(log_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                image = TrafficImage.from_bytes(
                    rec["camera_id"],
                    util.parse_iso_utc(rec["image_timestamp"]),
                    base64.b64decode(rec["body_b64"]),
                )
                outcome = dedup_insert(
                    archive,
                    image,
                    fetched_at=util.parse_iso_utc(rec["fetched_at"]),
                    source_url=rec.get("source_url", ""),
                )
            except (KeyError, ValueError, json.JSONDecodeError, DecodeError) as exc:
                logger.warning("fetch log %s line %d skipped: %s", log_path, lineno, exc)
                stats.errors += 1
                continue
            if outcome is InsertOutcome.INSERTED:
                stats.inserted += 1
            else:
                stats.duplicates += 1
    return stats


@dataclass
class CampaignStats:
    indexes_fetched: int = 0
    index_failures: int = 0
    images_fetched: int = 0
    image_failures: int = 0
    inserted: int = 0
    duplicates: int = 0
    index_warnings: int = 0


def fetch_campaign(
    endpoint: str,
    schedule: Sequence[datetime],
    camera_ids: Iterable[str],
    archive: ImageArchive,
    *,
    api_key: str | None = None,
    max_in_flight: int = 4,
    log_path: str | Path | None = None,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.5,
) -> CampaignStats:
    """Fetch every scheduled index and its selected camera images.

    A failed camera or index does not abort the batch; failures are tallied.
    Image fetches run concurrently (bounded); archive inserts and the fetch
    log are serialized.
    """
    wanted = set(camera_ids)
    stats = CampaignStats()
    log_lock = threading.Lock()
    for at in schedule:
        try:
            index = fetch_index(endpoint, at, api_key=api_key, timeout=timeout, retries=retries, backoff=backoff)
        except (TransportError, ParseError) as exc:
            logger.warning("index fetch at %s failed: %s", util.iso_utc(at), exc)
            stats.index_failures += 1
            continue
        stats.indexes_fetched += 1
        stats.index_warnings += index.warnings
        entries = [e for e in index.entries if not wanted or e.camera_id in wanted]

        def _fetch(entry: CameraIndexEntry) -> tuple[CameraIndexEntry, TrafficImage]:
            return entry, fetch_image(entry, api_key=api_key, timeout=timeout, retries=retries, backoff=backoff)

        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            futures = [pool.submit(_fetch, e) for e in entries]
            for fut in as_completed(futures):
                try:
                    entry, image = fut.result()
                except (TransportError, DecodeError, IntegrityError) as exc:
                    logger.warning("image fetch failed: %s", exc)
                    stats.image_failures += 1
                    continue
                stats.images_fetched += 1
                fetched_at = datetime.now(tz=timezone.utc)
                if log_path is not None:
                    with log_lock:
                        append_fetch_log(
                            log_path,
                            camera_id=entry.camera_id,
                            image_timestamp=entry.image_timestamp,
                            source_url=entry.image_url,
                            fetched_at=fetched_at,
                            body=image.encoded,
                        )
                outcome = dedup_insert(archive, image, fetched_at=fetched_at, source_url=entry.image_url)
                if outcome is InsertOutcome.INSERTED:
                    stats.inserted += 1
                else:
                    stats.duplicates += 1
    return stats
