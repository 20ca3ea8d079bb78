"""Vehicle counts from roadside traffic cameras, fused with co-located
particulate-matter sensing.

The package is a batch pipeline: fetch camera frames into a deduplicating
archive, black out everything outside each camera's region of interest,
run a pluggable detector and clean its boxes, aggregate per-image counts
onto a fixed time grid, and relate daily traffic to the PM1 excess of a
roadside sensor over a background sensor. A separate evaluation path
scores any detector against hand-labeled frames.
"""

__version__ = "0.1.0"

from .aggregation import BinCounts, bin_counts
from .analysis import DayPoint, correlate_days, parse_pm_csv, pearson_r
from .detection import Detection, FilterConfig, apply_filters, iou
from .errors import PipelineError
from .evaluation import compute_metrics, load_ground_truth, match_detections
from .imaging import RoiMask, apply_mask, point_in_polygon, rasterize_mask
from .ingest import ImageArchive, TrafficImage, plan_schedule

__all__ = [
    "__version__",
    "BinCounts",
    "bin_counts",
    "DayPoint",
    "correlate_days",
    "parse_pm_csv",
    "pearson_r",
    "Detection",
    "FilterConfig",
    "apply_filters",
    "iou",
    "PipelineError",
    "compute_metrics",
    "load_ground_truth",
    "match_detections",
    "RoiMask",
    "apply_mask",
    "point_in_polygon",
    "rasterize_mask",
    "ImageArchive",
    "TrafficImage",
    "plan_schedule",
]
