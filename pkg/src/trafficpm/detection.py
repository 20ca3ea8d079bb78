"""Detector backends and post-detection filtering.

The detector itself is pluggable: anything that answers the one-request
protocol (a JSON object naming an image file plus its dimensions, answered
by a JSON object with a ``detections`` list) can be used, over a child
process's stdio or HTTP. A fixture-backed mock makes runs hermetic.

Raw detector output is then cleaned in a fixed order: a confidence floor,
box-geometry limits (area fraction of the frame, aspect ratio), and a
cross-class overlap resolution that collapses groups of mutually
overlapping boxes with conflicting labels down to their most confident
member. An optional same-label suppression stage exists but is off by
default.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Protocol, Sequence

import requests

from . import util
from .errors import BackendError, ProtocolError

logger = logging.getLogger(__name__)

COUNTED_LABELS = ("car", "truck", "bus")

# precedence for confidence ties when collapsing overlapping boxes
_LABEL_ORDER = {"car": 0, "truck": 1, "bus": 2, "motorcycle": 3}


def label_rank(label: str) -> int:
    return _LABEL_ORDER.get(label, 4)


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    bbox: tuple[float, float, float, float]  # x, y, w, h

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    def to_dict(self) -> dict:
        return {"label": self.label, "confidence": self.confidence, "bbox": list(self.bbox)}


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(ax, bx)
    iy = max(ay, by)
    ix2 = min(ax + aw, bx + bw)
    iy2 = min(ay + ah, by + bh)
    iw = ix2 - ix
    ih = iy2 - iy
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the post-detection cleanup stages."""

    min_confidence: float = 0.30
    min_area_frac: float = 0.0005
    max_area_frac: float = 0.25
    min_aspect: float = 0.3
    max_aspect: float = 4.0
    cross_class_iou: float = 0.5
    # same-label suppression is opt-in; None disables it
    same_label_nms_iou: float | None = None

    def validate(self) -> None:
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError(f"min_confidence must be in [0, 1], got {self.min_confidence}")
        if not 0.0 <= self.min_area_frac <= self.max_area_frac:
            raise ValueError(
                f"need 0 <= min_area_frac <= max_area_frac, got {self.min_area_frac}, {self.max_area_frac}"
            )
        if not 0.0 < self.min_aspect <= self.max_aspect:
            raise ValueError(f"need 0 < min_aspect <= max_aspect, got {self.min_aspect}, {self.max_aspect}")
        if not 0.0 < self.cross_class_iou <= 1.0:
            raise ValueError(f"cross_class_iou must be in (0, 1], got {self.cross_class_iou}")
        if self.same_label_nms_iou is not None and not 0.0 < self.same_label_nms_iou <= 1.0:
            raise ValueError(f"same_label_nms_iou must be in (0, 1], got {self.same_label_nms_iou}")


def filter_confidence(dets: Sequence[Detection], min_confidence: float) -> list[Detection]:
    return [d for d in dets if d.confidence >= min_confidence]


def filter_geometry(dets: Sequence[Detection], width: int, height: int, cfg: FilterConfig) -> list[Detection]:
    """Drop boxes implausibly small/large for the frame, or too elongated."""
    frame_area = float(width) * float(height)
    kept = []
    for d in dets:
        w, h = d.bbox[2], d.bbox[3]
        frac = (w * h) / frame_area
        if frac < cfg.min_area_frac or frac > cfg.max_area_frac:
            continue
        aspect = w / h
        if aspect < cfg.min_aspect or aspect > cfg.max_aspect:
            continue
        kept.append(d)
    return kept


def resolve_cross_class(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Collapse overlapping detections with conflicting labels.

    Detections of *different* labels whose IoU reaches the threshold are
    linked; each connected group keeps only its most confident member
    (ties: label precedence car, truck, bus, motorcycle, then anything
    else; then earlier input position). Output preserves input order.
    """
    n = len(dets)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if dets[i].label == dets[j].label:
                continue
            if iou(dets[i].bbox, dets[j].bbox) >= iou_threshold:
                parent[find(i)] = find(j)

    best: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        cur = best.get(root)
        if cur is None:
            best[root] = i
            continue
        a, b = dets[i], dets[cur]
        if (-a.confidence, label_rank(a.label), i) < (-b.confidence, label_rank(b.label), cur):
            best[root] = i
    winners = sorted(best.values())
    return [dets[i] for i in winners]


def suppress_same_label(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy same-label suppression, most confident first. Off by default."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    removed = [False] * len(dets)
    for pos, i in enumerate(order):
        if removed[i]:
            continue
        for j in order[pos + 1 :]:
            if removed[j] or dets[j].label != dets[i].label:
                continue
            if iou(dets[i].bbox, dets[j].bbox) >= iou_threshold:
                removed[j] = True
    return [d for k, d in enumerate(dets) if not removed[k]]


def apply_filters(dets: Sequence[Detection], width: int, height: int, cfg: FilterConfig) -> list[Detection]:
    """Run the cleanup stages in their fixed order."""
    cfg.validate()
    out = filter_confidence(dets, cfg.min_confidence)
    out = filter_geometry(out, width, height, cfg)
    out = resolve_cross_class(out, cfg.cross_class_iou)
    if cfg.same_label_nms_iou is not None:
        out = suppress_same_label(out, cfg.same_label_nms_iou)
    return out


def parse_detect_response(payload, *, source: str = "<backend>") -> list[Detection]:
    """Validate one protocol response and pull out its detections."""
    if not isinstance(payload, dict):
        raise ProtocolError(f"{source}: response must be a JSON object", field="detections")
    if "error" in payload:
        raise BackendError(f"{source}: backend reported error: {payload['error']}")
    raw = payload.get("detections")
    if not isinstance(raw, list):
        raise ProtocolError(f"{source}: missing 'detections' list", field="detections")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ProtocolError(f"{source}: detection {k} is not an object", field=f"detections[{k}]")
        label = item.get("label")
        if not isinstance(label, str) or not label:
            raise ProtocolError(f"{source}: detection {k} has no usable label", field=f"detections[{k}].label")
        conf = item.get("confidence")
        if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not math.isfinite(conf):
            raise ProtocolError(
                f"{source}: detection {k} confidence is not a finite number",
                field=f"detections[{k}].confidence",
            )
        conf = float(conf)
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError(
                f"{source}: detection {k} confidence {conf} outside [0, 1]",
                field=f"detections[{k}].confidence",
            )
        bbox = item.get("bbox")
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ProtocolError(
                f"{source}: detection {k} bbox must be [x, y, w, h]", field=f"detections[{k}].bbox"
            )
        vals = []
        for v in bbox:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ProtocolError(
                    f"{source}: detection {k} bbox has a non-finite entry", field=f"detections[{k}].bbox"
                )
            vals.append(float(v))
        if vals[2] <= 0.0 or vals[3] <= 0.0:
            raise ProtocolError(
                f"{source}: detection {k} bbox has non-positive size", field=f"detections[{k}].bbox"
            )
        out.append(Detection(label, conf, (vals[0], vals[1], vals[2], vals[3])))
    return out


class DetectorBackend(Protocol):
    def detect(self, image_path: Path, width: int, height: int) -> list[Detection]: ...

    def close(self) -> None: ...


class StdioBackend:
    """Child-process detector speaking one JSON object per line on stdio.

    The child is started lazily and kept alive across requests. Its stderr
    is inherited so diagnostics stay visible.
    """

    def __init__(self, argv: Sequence[str], *, cwd: str | None = None):
        if not argv:
            raise ValueError("stdio backend needs a command")
        self.argv = list(argv)
        self.cwd = cwd
        self._proc: subprocess.Popen | None = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv,
                cwd=self.cwd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def detect(self, image_path: Path, width: int, height: int) -> list[Detection]:
        proc = self._ensure_proc()
        request = {"image_path": str(image_path), "width": width, "height": height}
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"detector process {self.argv[0]} dropped the connection: {exc}") from exc
        if not line:
            code = proc.poll()
            raise BackendError(f"detector process {self.argv[0]} closed stdout (exit status {code})")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"stdio backend sent invalid JSON: {exc.msg}", field="<line>") from exc
        return parse_detect_response(payload, source=f"stdio:{self.argv[0]}")

    def close(self) -> None:
        if self._proc is None:
            return
        proc, self._proc = self._proc, None
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HttpBackend:
    """Detector behind ``POST <endpoint>/detect``."""

    def __init__(self, endpoint: str, *, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def detect(self, image_path: Path, width: int, height: int) -> list[Detection]:
        request = {"image_path": str(image_path), "width": width, "height": height}
        url = f"{self.endpoint}/detect"
        try:
            resp = requests.post(url, json=request, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"POST {url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"POST {url} returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{url}: response is not JSON", field="<body>") from exc
        return parse_detect_response(payload, source=url)

    def close(self) -> None:
        pass


class MockBackend:
    """Fixture-backed detector for hermetic runs.

    The fixture maps an image key to its canned response. Lookup tries the
    exact path string, then the basename, then the stem, so fixtures stay
    portable across working directories and file extensions.
    """

    def __init__(self, fixture_path: str | Path):
        self.fixture_path = Path(fixture_path)
        try:
            self._fixture = json.loads(self.fixture_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"cannot load detector fixture {fixture_path}: {exc}") from exc
        if not isinstance(self._fixture, dict):
            raise BackendError(f"detector fixture {fixture_path} must be a JSON object")

    def detect(self, image_path: Path, width: int, height: int) -> list[Detection]:
        path = Path(image_path)
        entry = None
        for key in (str(path), path.name, path.stem):
            if key in self._fixture:
                entry = self._fixture[key]
                break
        if entry is None:
            raise BackendError(f"detector fixture has no entry for {path}")
        payload = entry if isinstance(entry, dict) else {"detections": entry}
        return parse_detect_response(payload, source=f"mock:{self.fixture_path.name}")

    def close(self) -> None:
        pass


def make_backend(kind: str, target: str, *, timeout: float = 60.0) -> DetectorBackend:
    """Build a backend from config: kind is 'stdio', 'http', or 'mock'."""
    if kind == "stdio":
        import shlex

        return StdioBackend(shlex.split(target))
    if kind == "http":
        return HttpBackend(target, timeout=timeout)
    if kind == "mock":
        return MockBackend(target)
    raise ValueError(f"unknown detector backend kind {kind!r}")


@dataclass(frozen=True)
class ImageDetections:
    """Per-image detector output after filtering (``unfiltered`` keeps the
    pre-filter boxes so detector quality can be assessed with and without
    the cleanup stages)."""

    camera_id: str
    image_timestamp: datetime
    image_ref: str
    detections: tuple[Detection, ...]
    unfiltered: tuple[Detection, ...] | None = None

    def to_dict(self) -> dict:
        out = {
            "camera_id": self.camera_id,
            "image_timestamp": util.iso_utc(self.image_timestamp),
            "image_ref": self.image_ref,
            "detections": [d.to_dict() for d in self.detections],
        }
        if self.unfiltered is not None:
            out["unfiltered"] = [d.to_dict() for d in self.unfiltered]
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ImageDetections":
        dets = parse_detect_response({"detections": payload["detections"]}, source="<detections file>")
        unfiltered = None
        if "unfiltered" in payload:
            unfiltered = tuple(
                parse_detect_response({"detections": payload["unfiltered"]}, source="<detections file>")
            )
        return cls(
            camera_id=payload["camera_id"],
            image_timestamp=util.parse_iso_utc(payload["image_timestamp"]),
            image_ref=payload["image_ref"],
            detections=tuple(dets),
            unfiltered=unfiltered,
        )


def write_detections_jsonl(path: str | Path, items: Sequence[ImageDetections]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")


def read_detections_jsonl(path: str | Path) -> list[ImageDetections]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(ImageDetections.from_dict(json.loads(line)))
            except (KeyError, ValueError, json.JSONDecodeError, ProtocolError) as exc:
                raise ProtocolError(f"{path} line {lineno}: {exc}", field="<line>") from exc
    return out
