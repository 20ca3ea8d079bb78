"""Run configuration.

One JSON file drives a whole batch run. Unknown keys are rejected rather
than ignored so a typo cannot silently disable a stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from . import util
from .detection import FilterConfig
from .errors import ValidationError

DEFAULT_INTERVAL_S = 300
SAME_LABEL_NMS_DEFAULT = 0.7

_TOP_KEYS = {
    "endpoint",
    "api_key",
    "cameras",
    "start",
    "end",
    "interval_s",
    "archive_dir",
    "masks_dir",
    "masked_dir",
    "require_masks",
    "detector",
    "filters",
    "pm_csv",
    "roadside_location",
    "background_location",
    "exclude_dates",
    "analysis_camera",
    "out_dir",
    "replay_log",
    "fetch_log",
}

_FILTER_KEYS = {
    "min_confidence",
    "min_area_frac",
    "max_area_frac",
    "min_aspect",
    "max_aspect",
    "cross_class_iou",
    "same_label_nms_iou",
}

_DETECTOR_KINDS = {"stdio", "http", "mock"}


@dataclass
class RunConfig:
    archive_dir: str
    out_dir: str = "out"
    endpoint: str | None = None
    api_key: str | None = None
    cameras: list[str] = field(default_factory=list)
    start: datetime | None = None
    end: datetime | None = None
    interval_s: int = DEFAULT_INTERVAL_S
    masks_dir: str | None = None
    masked_dir: str | None = None
    require_masks: bool = True
    detector_kind: str = "mock"
    detector_target: str = ""
    filters: FilterConfig = field(default_factory=FilterConfig)
    pm_csv: str | None = None
    roadside_location: str | None = None
    background_location: str | None = None
    exclude_dates: list[date] = field(default_factory=list)
    analysis_camera: str | None = None
    replay_log: str | None = None
    fetch_log: str | None = None

    @property
    def masked_root(self) -> Path:
        return Path(self.masked_dir) if self.masked_dir else Path(self.out_dir) / "masked"


def _expect(condition: bool, source: str, message: str) -> None:
    if not condition:
        raise ValidationError(f"{source}: {message}")


def _opt_str(payload: dict, key: str, source: str) -> str | None:
    value = payload.get(key)
    if value is None:
        return None
    _expect(isinstance(value, str) and bool(value), source, f"'{key}' must be a non-empty string")
    return value


def parse_filters(payload: dict, *, source: str) -> FilterConfig:
    _expect(isinstance(payload, dict), source, "'filters' must be an object")
    unknown = set(payload) - _FILTER_KEYS
    _expect(not unknown, source, f"unknown filter key(s): {sorted(unknown)}")
    kwargs = {}
    for key in _FILTER_KEYS:
        if key not in payload:
            continue
        value = payload[key]
        if key == "same_label_nms_iou" and value is None:
            kwargs[key] = None
            continue
        _expect(
            isinstance(value, (int, float)) and not isinstance(value, bool),
            source,
            f"filter '{key}' must be a number",
        )
        kwargs[key] = float(value)
    cfg = FilterConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from exc
    return cfg


def parse_config(payload: dict, *, source: str = "<config>") -> RunConfig:
    _expect(isinstance(payload, dict), source, "config must be a JSON object")
    unknown = set(payload) - _TOP_KEYS
    _expect(not unknown, source, f"unknown config key(s): {sorted(unknown)}")

    archive_dir = payload.get("archive_dir")
    _expect(isinstance(archive_dir, str) and bool(archive_dir), source, "'archive_dir' is required")

    cfg = RunConfig(archive_dir=archive_dir)
    cfg.out_dir = _opt_str(payload, "out_dir", source) or cfg.out_dir
    cfg.endpoint = _opt_str(payload, "endpoint", source)
    cfg.api_key = _opt_str(payload, "api_key", source)
    cfg.masks_dir = _opt_str(payload, "masks_dir", source)
    cfg.masked_dir = _opt_str(payload, "masked_dir", source)
    cfg.pm_csv = _opt_str(payload, "pm_csv", source)
    cfg.roadside_location = _opt_str(payload, "roadside_location", source)
    cfg.background_location = _opt_str(payload, "background_location", source)
    cfg.analysis_camera = _opt_str(payload, "analysis_camera", source)
    cfg.replay_log = _opt_str(payload, "replay_log", source)
    cfg.fetch_log = _opt_str(payload, "fetch_log", source)

    if "require_masks" in payload:
        _expect(isinstance(payload["require_masks"], bool), source, "'require_masks' must be a boolean")
        cfg.require_masks = payload["require_masks"]

    if "cameras" in payload:
        cameras = payload["cameras"]
        _expect(
            isinstance(cameras, list) and all(isinstance(c, str) and c for c in cameras),
            source,
            "'cameras' must be a list of non-empty strings",
        )
        cfg.cameras = list(cameras)

    for key in ("start", "end"):
        if payload.get(key) is not None:
            _expect(isinstance(payload[key], str), source, f"'{key}' must be an ISO 8601 string")
            try:
                setattr(cfg, key, util.parse_iso_utc(payload[key]))
            except ValueError as exc:
                raise ValidationError(f"{source}: '{key}': {exc}") from exc
    if cfg.start and cfg.end:
        _expect(cfg.start < cfg.end, source, "'start' must be before 'end'")

    if "interval_s" in payload:
        value = payload["interval_s"]
        _expect(
            isinstance(value, int) and not isinstance(value, bool) and value >= 60,
            source,
            "'interval_s' must be an integer >= 60",
        )
        cfg.interval_s = value

    if "detector" in payload:
        det = payload["detector"]
        _expect(isinstance(det, dict), source, "'detector' must be an object")
        unknown = set(det) - {"kind", "target"}
        _expect(not unknown, source, f"unknown detector key(s): {sorted(unknown)}")
        kind = det.get("kind")
        _expect(kind in _DETECTOR_KINDS, source, f"detector kind must be one of {sorted(_DETECTOR_KINDS)}")
        target = det.get("target")
        _expect(isinstance(target, str) and bool(target), source, "detector 'target' is required")
        cfg.detector_kind = kind
        cfg.detector_target = target

    if "filters" in payload:
        cfg.filters = parse_filters(payload["filters"], source=source)

    if "exclude_dates" in payload:
        raw = payload["exclude_dates"]
        _expect(isinstance(raw, list), source, "'exclude_dates' must be a list of YYYY-MM-DD strings")
        dates = []
        for item in raw:
            _expect(isinstance(item, str), source, "'exclude_dates' entries must be strings")
            try:
                dates.append(date.fromisoformat(item))
            except ValueError as exc:
                raise ValidationError(f"{source}: 'exclude_dates': {exc}") from exc
        cfg.exclude_dates = dates

    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: config is not valid JSON: {exc}") from exc
    return parse_config(payload, source=str(path))
