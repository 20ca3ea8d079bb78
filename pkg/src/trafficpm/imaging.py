"""Region-of-interest masking.

Each camera has a hand-drawn polygon delimiting the roadway actually
monitored. Pixels outside the polygon are blacked out (the frame keeps its
dimensions, so detector box coordinates stay in the original frame).

Membership uses the even-odd rule, tested at pixel centers (x+0.5, y+0.5);
points exactly on a polygon edge count as inside. The vectorized raster and
the scalar test are written with the same floating-point operations in the
same order, so they agree bit for bit on every pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import util
from .errors import ValidationError
from .ingest import TrafficImage

Point = tuple[float, float]


@dataclass(frozen=True)
class RoiMask:
    camera_id: str
    image_width: int
    image_height: int
    polygon: tuple[Point, ...]

    def rasterize(self) -> np.ndarray:
        return rasterize_mask(self.image_width, self.image_height, self.polygon)


def point_on_segment(px: float, py: float, x1: float, y1: float, x2: float, y2: float) -> bool:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    if cross != 0.0:
        return False
    return min(x1, x2) <= px <= max(x1, x2) and min(y1, y2) <= py <= max(y1, y2)


def point_in_polygon(px: float, py: float, polygon: tuple[Point, ...] | list[Point]) -> bool:
    """Even-odd membership; points on an edge are inside."""
    n = len(polygon)
    inside = False
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if point_on_segment(px, py, x1, y1, x2, y2):
            return True
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xint:
                inside = not inside
    return inside


def rasterize_mask(width: int, height: int, polygon: tuple[Point, ...] | list[Point]) -> np.ndarray:
    """Boolean (height, width) raster of the polygon, True inside.

    Mirrors point_in_polygon exactly: identical expressions evaluated over
    pixel-center grids, one edge at a time, so no pixel can disagree with
    the scalar test.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"raster dimensions must be positive, got {width}x{height}")
    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    PX = np.broadcast_to(px[None, :], (height, width))
    PY = np.broadcast_to(py[:, None], (height, width))
    inside = np.zeros((height, width), dtype=bool)
    boundary = np.zeros((height, width), dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        cross = (x2 - x1) * (PY - y1) - (y2 - y1) * (PX - x1)
        on = (
            (cross == 0.0)
            & (min(x1, x2) <= PX)
            & (PX <= max(x1, x2))
            & (min(y1, y2) <= PY)
            & (PY <= max(y1, y2))
        )
        boundary |= on
        crossing_rows = (y1 > PY) != (y2 > PY)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xint = x1 + (PY - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crossing_rows & (PX < xint)
    return inside | boundary


def load_mask(path: str | Path) -> RoiMask:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read mask: {exc}") from exc
    return parse_mask(payload, source=str(path))


def parse_mask(payload: dict, *, source: str = "<mask>") -> RoiMask:
    if not isinstance(payload, dict):
        raise ValidationError(f"{source}: mask must be a JSON object")
    camera_id = payload.get("camera_id")
    if not camera_id or not isinstance(camera_id, str):
        raise ValidationError(f"{source}: 'camera_id' missing or not a string")
    try:
        width = int(payload["image_width"])
        height = int(payload["image_height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{source}: 'image_width'/'image_height' missing or non-integer") from exc
    if width <= 0 or height <= 0:
        raise ValidationError(f"{source}: image dimensions must be positive, got {width}x{height}")
    raw = payload.get("polygon")
    if not isinstance(raw, list) or len(raw) < 3:
        raise ValidationError(f"{source}: 'polygon' must list at least 3 vertices")
    polygon: list[Point] = []
    for k, vertex in enumerate(raw):
        if not isinstance(vertex, (list, tuple)) or len(vertex) != 2:
            raise ValidationError(f"{source}: polygon vertex {k} must be an [x, y] pair")
        try:
            x = float(vertex[0])
            y = float(vertex[1])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{source}: polygon vertex {k} is not numeric") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError(f"{source}: polygon vertex {k} is not finite")
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise ValidationError(
                f"{source}: polygon vertex {k} ({x}, {y}) outside image bounds {width}x{height}"
            )
        polygon.append((x, y))
    return RoiMask(camera_id, width, height, tuple(polygon))


def save_mask(mask: RoiMask, path: str | Path) -> None:
    payload = {
        "camera_id": mask.camera_id,
        "image_width": mask.image_width,
        "image_height": mask.image_height,
        "polygon": [[x, y] for x, y in mask.polygon],
    }
    util.write_json(path, payload)


def mask_for_camera(mask_dir: str | Path, camera_id: str) -> RoiMask:
    """Load the mask file named after the camera (<camera_id>.json)."""
    path = Path(mask_dir) / f"{camera_id}.json"
    if not path.exists():
        raise ValidationError(f"no mask for camera {camera_id} in {mask_dir}")
    mask = load_mask(path)
    if mask.camera_id != camera_id:
        raise ValidationError(f"{path}: mask declares camera {mask.camera_id!r}, expected {camera_id!r}")
    return mask


def apply_mask(image: TrafficImage, mask: RoiMask) -> TrafficImage:
    """Black out everything outside the ROI, keeping frame dimensions.

    The result is re-encoded losslessly, so masking is idempotent:
    re-masking a masked frame reproduces the same bytes.
    """
    if image.width != mask.image_width or image.height != mask.image_height:
        raise ValidationError(
            f"mask for camera {mask.camera_id} is {mask.image_width}x{mask.image_height} "
            f"but image is {image.width}x{image.height}"
        )
    keep = mask.rasterize()
    pixels = image.pixels.copy()
    pixels[~keep] = 0
    return TrafficImage.from_pixels(image.camera_id, image.image_timestamp, pixels)
