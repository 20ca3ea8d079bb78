"""Native-label to output-label mapping, kept in a data file so a model
swap is a config change, not a code change."""

from __future__ import annotations

import json
from importlib import resources

OUTPUT_LABELS = ("car", "truck", "bus", "motorcycle", "other")

_DATA = json.loads(
    resources.files(__package__).joinpath("coco_labelmap.json").read_text(encoding="utf-8")
)
_NATIVE_NAMES: dict[str, str] = _DATA["native_names"]
_LABEL_MAP: dict[str, str] = _DATA["label_map"]
_DEFAULT: str = _DATA["default"]

assert _DEFAULT in OUTPUT_LABELS
assert all(v in OUTPUT_LABELS for v in _LABEL_MAP.values())


def category_name(category_id: int) -> str:
    """The model's native name for a category id (COCO ids for the
    torchvision wrapper); unknown ids get a stable placeholder."""
    return _NATIVE_NAMES.get(str(category_id), f"id_{category_id}")


def map_label(native: str) -> str:
    """Total mapping: every native label lands in OUTPUT_LABELS."""
    return _LABEL_MAP.get(native, _DEFAULT)
