"""Command line entry points.

Subcommands mirror the batch stages: ``fetch`` pulls (or replays) camera
frames into the archive, ``detect`` runs the detector over archived frames
and filters the boxes, ``analyze`` turns detections plus sensor exports
into counts, summaries and the correlation report, ``eval`` scores
detections against hand labels, and ``run`` chains fetch/detect/analyze.

Exit status: 0 on success, 1 when a stage fails at runtime, 2 for unusable
arguments, config or input files. Diagnostics go to stderr as one JSON
object per line; result files land in the configured output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from PIL import Image

from . import aggregation, analysis, detection, evaluation, imaging, ingest, util
from .config import RunConfig, load_config
from .errors import PipelineError, UndefinedCorrelationError, ValidationError

logger = logging.getLogger(__name__)


class JsonLineHandler(logging.Handler):
    """One JSON object per log record, on stderr."""

    def emit(self, record: logging.LogRecord) -> None:
        payload = {
            "ts": util.iso_utc(datetime.now(tz=timezone.utc)),
            "level": record.levelname.lower(),
            "event": record.getMessage(),
        }
        fields = getattr(record, "fields", None)
        if isinstance(fields, dict):
            payload.update(fields)
        try:
            sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
            sys.stderr.flush()
        except Exception:
            self.handleError(record)


def setup_logging(verbose: bool = False) -> None:
    root = logging.getLogger("trafficpm")
    root.handlers.clear()
    root.addHandler(JsonLineHandler())
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def jlog(level: int, event: str, **fields) -> None:
    logger.log(level, event, extra={"fields": fields})


def cmd_fetch(cfg: RunConfig) -> int:
    archive = ingest.ImageArchive(cfg.archive_dir)
    if cfg.replay_log:
        stats = ingest.replay_fetch_log(cfg.replay_log, archive)
        jlog(
            logging.INFO,
            "replay complete",
            log=cfg.replay_log,
            inserted=stats.inserted,
            duplicates=stats.duplicates,
            errors=stats.errors,
            archived=len(archive),
        )
        return 0
    if not (cfg.endpoint and cfg.start and cfg.end):
        raise ValidationError("fetch needs 'endpoint', 'start' and 'end' (or a 'replay_log')")
    schedule = ingest.plan_schedule(cfg.start, cfg.end, cfg.interval_s)
    stats = ingest.fetch_campaign(
        cfg.endpoint,
        schedule,
        cfg.cameras,
        archive,
        api_key=cfg.api_key,
        log_path=cfg.fetch_log,
    )
    jlog(
        logging.INFO,
        "fetch complete",
        scheduled=len(schedule),
        indexes_fetched=stats.indexes_fetched,
        index_failures=stats.index_failures,
        images_fetched=stats.images_fetched,
        image_failures=stats.image_failures,
        inserted=stats.inserted,
        duplicates=stats.duplicates,
        index_warnings=stats.index_warnings,
        archived=len(archive),
    )
    if schedule and stats.indexes_fetched == 0:
        jlog(logging.ERROR, "every index fetch failed")
        return 1
    return 0


def _masked_frame(cfg: RunConfig, archive: ingest.ImageArchive, record: ingest.LedgerRecord,
                  masks: dict[str, imaging.RoiMask | None]) -> Path:
    """Path handed to the detector: the ROI-masked frame, or the archived
    original when no masking is configured for the camera."""
    if cfg.masks_dir is None:
        return archive.image_path(record)
    if record.camera_id not in masks:
        try:
            masks[record.camera_id] = imaging.mask_for_camera(cfg.masks_dir, record.camera_id)
        except ValidationError:
            if cfg.require_masks:
                raise
            masks[record.camera_id] = None
            jlog(logging.WARNING, "no mask; using unmasked frames", camera_id=record.camera_id)
    mask = masks[record.camera_id]
    if mask is None:
        return archive.image_path(record)
    out_path = cfg.masked_root / record.camera_id / (
        util.image_stem(record.image_timestamp, record.content_hash) + ".png"
    )
    if not out_path.exists():
        image = archive.load_image(record)
        masked = imaging.apply_mask(image, mask)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(masked.encoded)
    return out_path


def cmd_detect(cfg: RunConfig, *, camera: str | None = None) -> int:
    archive = ingest.ImageArchive(cfg.archive_dir, create=False)
    if not cfg.detector_target:
        raise ValidationError("detect needs a 'detector' with kind and target")
    backend = detection.make_backend(cfg.detector_kind, cfg.detector_target)
    wanted = set(cfg.cameras)
    if camera:
        wanted = {camera}
    records = [r for r in archive.records() if not wanted or r.camera_id in wanted]
    records.sort(key=lambda r: (r.camera_id, r.image_timestamp, r.content_hash))
    masks: dict[str, imaging.RoiMask | None] = {}
    items = []
    n_raw = n_kept = 0
    try:
        for record in records:
            frame_path = _masked_frame(cfg, archive, record, masks)
            width, height = _image_size(frame_path)
            raw = backend.detect(frame_path, width, height)
            kept = detection.apply_filters(raw, width, height, cfg.filters)
            n_raw += len(raw)
            n_kept += len(kept)
            items.append(
                detection.ImageDetections(
                    camera_id=record.camera_id,
                    image_timestamp=record.image_timestamp,
                    image_ref=record.image_ref,
                    detections=tuple(kept),
                    unfiltered=tuple(raw),
                )
            )
    finally:
        backend.close()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "detections.jsonl"
    detection.write_detections_jsonl(out_path, items)
    jlog(
        logging.INFO,
        "detect complete",
        images=len(items),
        detections_raw=n_raw,
        detections_kept=n_kept,
        out=str(out_path),
    )
    return 0


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


def cmd_analyze(cfg: RunConfig, *, detections_path: str | None = None) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    det_path = Path(detections_path) if detections_path else out_dir / "detections.jsonl"
    items = detection.read_detections_jsonl(det_path)
    cameras = cfg.cameras or sorted({item.camera_id for item in items})

    all_bins: list[aggregation.BinCounts] = []
    for camera_id in cameras:
        all_bins.extend(aggregation.bin_counts(items, camera_id, interval_s=cfg.interval_s))
    counts_path = out_dir / "counts.csv"
    aggregation.write_counts_csv(counts_path, all_bins)
    jlog(logging.INFO, "counts written", cameras=len(cameras), bins=len(all_bins), out=str(counts_path))

    if not cfg.pm_csv:
        return 0
    if not (cfg.roadside_location and cfg.background_location):
        raise ValidationError("analyze needs 'roadside_location' and 'background_location' with 'pm_csv'")

    parsed = analysis.parse_pm_csv(cfg.pm_csv)
    jlog(
        logging.INFO,
        "sensor rows screened",
        total=parsed.total_rows,
        kept=len(parsed.rows),
        dropped=parsed.dropped,
        flagged_pm25_below_pm1=parsed.flagged,
    )
    pm_bins = analysis.bin_pm(parsed.rows, interval_s=cfg.interval_s)
    boxplot_path = out_dir / "boxplot.csv"
    analysis.write_boxplot_csv(boxplot_path, analysis.daily_boxplot_rows(pm_bins))
    jlog(logging.INFO, "sensor summaries written", bins=len(pm_bins), out=str(boxplot_path))

    analysis_camera = cfg.analysis_camera
    if analysis_camera is None:
        if len(cameras) != 1:
            raise ValidationError("'analysis_camera' is required when several cameras are configured")
        analysis_camera = cameras[0]
    camera_bins = [b for b in all_bins if b.camera_id == analysis_camera]
    built = analysis.build_day_points(
        camera_bins,
        pm_bins,
        roadside=cfg.roadside_location,
        background=cfg.background_location,
        interval_s=cfg.interval_s,
    )
    for day, reason in built.skipped:
        jlog(logging.WARNING, "day skipped", date=day.isoformat(), reason=reason)

    report = analysis.correlate_days(built.points, cfg.exclude_dates)
    analysis.write_scatter_csv(out_dir / "scatter.csv", report.points)
    analysis.write_report_json(out_dir / "report.json", report)
    jlog(
        logging.INFO,
        "correlation report written",
        r=report.r,
        r_all_days=report.r_all_days,
        n_days=report.n_days,
        excluded=[d.isoformat() for d in report.excluded_dates],
        out=str(out_dir / "report.json"),
    )
    return 0


def cmd_eval(args) -> int:
    gt = evaluation.load_ground_truth(args.gt)
    items = detection.read_detections_jsonl(args.detections)
    by_ref = {}
    for item in items:
        if args.which == "raw":
            if item.unfiltered is None:
                raise ValidationError(
                    f"{args.detections}: no unfiltered boxes recorded for {item.image_ref}; "
                    "re-run detect to evaluate raw output"
                )
            by_ref[item.image_ref] = item.unfiltered
        else:
            by_ref[item.image_ref] = item.detections
    missing = [im.image_ref for im in gt if im.image_ref not in by_ref]
    if missing:
        jlog(logging.WARNING, "labeled images without detections", image_refs=missing)
    metrics = evaluation.compute_metrics(gt, by_ref, iou_threshold=args.iou)
    report = evaluation.metrics_report(metrics, iou_threshold=args.iou, n_images=len(gt))
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for name, m in sorted(metrics.items()):
        jlog(
            logging.INFO,
            "group scored",
            group=name,
            gt_count=m.gt_count,
            rate_correct=m.rate_correct,
            rate_undetected=m.rate_undetected,
            rate_misclassified=m.rate_misclassified,
            rate_falsely_detected=m.rate_falsely_detected,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficpm",
        description="Vehicle counts from roadside cameras, fused with particulate-matter sensing.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fetch = sub.add_parser("fetch", help="pull or replay camera frames into the archive")
    p_fetch.add_argument("--config", required=True)

    p_detect = sub.add_parser("detect", help="run the detector over archived frames")
    p_detect.add_argument("--config", required=True)
    p_detect.add_argument("--camera", help="restrict to one camera id")

    p_analyze = sub.add_parser("analyze", help="counts, sensor summaries and the correlation report")
    p_analyze.add_argument("--config", required=True)
    p_analyze.add_argument("--detections", help="detections file (default: <out_dir>/detections.jsonl)")

    p_eval = sub.add_parser("eval", help="score detections against hand labels")
    p_eval.add_argument("--gt", required=True, help="label file")
    p_eval.add_argument("--detections", required=True, help="detections file from the detect stage")
    p_eval.add_argument("--which", choices=("filtered", "raw"), default="filtered")
    p_eval.add_argument("--iou", type=float, default=evaluation.DEFAULT_IOU_THRESHOLD)
    p_eval.add_argument("--out", help="write the metrics report here instead of stdout")

    p_run = sub.add_parser("run", help="fetch, detect and analyze in one go")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--camera", help="restrict detection to one camera id")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        if args.command == "eval":
            return cmd_eval(args)
        cfg = load_config(args.config)
        if args.command == "fetch":
            return cmd_fetch(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, camera=args.camera)
        if args.command == "analyze":
            return cmd_analyze(cfg, detections_path=args.detections)
        if args.command == "run":
            for step in (
                lambda: cmd_fetch(cfg),
                lambda: cmd_detect(cfg, camera=args.camera),
                lambda: cmd_analyze(cfg),
            ):
                status = step()
                if status != 0:
                    return status
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except ValidationError as exc:
        jlog(logging.ERROR, "unusable input", error=str(exc))
        return 2
    except UndefinedCorrelationError as exc:
        jlog(logging.ERROR, "correlation undefined", error=str(exc))
        return 1
    except PipelineError as exc:
        jlog(logging.ERROR, "stage failed", error=str(exc))
        return 1
    except OSError as exc:
        jlog(logging.ERROR, "file system error", error=str(exc))
        return 1


def main_entry() -> None:
    sys.exit(main())
