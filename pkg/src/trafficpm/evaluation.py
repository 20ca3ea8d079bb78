"""Detector quality against hand-labeled frames.

Matching is geometric and label-blind: predictions are taken most
confident first, each claiming the still-unclaimed ground-truth box it
overlaps best (IoU at or above the threshold). Labels only enter
afterwards, when the matches are scored.

Vehicle classes are scored in groups (cars alone; trucks and buses
pooled). For a group, a ground-truth box is correctly identified when its
matched prediction's label falls in the same group, misclassified when the
matched label falls outside it, and undetected when nothing claimed it.
Those three counts partition the group's ground truth exactly. A
prediction in the group that claimed no ground truth of the group is a
false detection; its rate is normalized by the group's ground-truth count,
so it can exceed 1 when the detector hallucinates more objects than exist.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import util
from .detection import Detection, iou
from .errors import ValidationError

DEFAULT_IOU_THRESHOLD = 0.5

# group name -> labels pooled into it
DEFAULT_GROUPS: dict[str, tuple[str, ...]] = {
    "car": ("car",),
    "trucks_buses": ("truck", "bus"),
}


@dataclass(frozen=True)
class GtBox:
    label: str
    bbox: tuple[float, float, float, float]


@dataclass(frozen=True)
class GtImage:
    image_ref: str
    boxes: tuple[GtBox, ...]


def load_ground_truth(path: str | Path) -> list[GtImage]:
    """Read a label file: {"images": [{"image_ref", "boxes": [{"label", "bbox"}]}]}."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read label file: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("images"), list):
        raise ValidationError(f"{path}: label file must be an object with an 'images' list")
    images = []
    seen: set[str] = set()
    for i, item in enumerate(payload["images"]):
        if not isinstance(item, dict):
            raise ValidationError(f"{path}: images[{i}] is not an object")
        ref = item.get("image_ref")
        if not isinstance(ref, str) or not ref:
            raise ValidationError(f"{path}: images[{i}].image_ref missing or empty")
        if ref in seen:
            raise ValidationError(f"{path}: duplicate image_ref {ref!r}")
        seen.add(ref)
        raw_boxes = item.get("boxes")
        if not isinstance(raw_boxes, list):
            raise ValidationError(f"{path}: images[{i}].boxes must be a list")
        boxes = []
        for k, raw in enumerate(raw_boxes):
            where = f"images[{i}].boxes[{k}]"
            if not isinstance(raw, dict):
                raise ValidationError(f"{path}: {where} is not an object")
            label = raw.get("label")
            if not isinstance(label, str) or not label:
                raise ValidationError(f"{path}: {where}.label missing or empty")
            bbox = raw.get("bbox")
            if not isinstance(bbox, list) or len(bbox) != 4:
                raise ValidationError(f"{path}: {where}.bbox must be [x, y, w, h]")
            vals = []
            for v in bbox:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                    raise ValidationError(f"{path}: {where}.bbox has a non-finite entry")
                vals.append(float(v))
            if vals[2] <= 0.0 or vals[3] <= 0.0:
                raise ValidationError(f"{path}: {where}.bbox has non-positive size")
            boxes.append(GtBox(label, (vals[0], vals[1], vals[2], vals[3])))
        images.append(GtImage(ref, tuple(boxes)))
    return images


def save_ground_truth(path: str | Path, images: Sequence[GtImage]) -> None:
    payload = {
        "images": [
            {
                "image_ref": im.image_ref,
                "boxes": [{"label": b.label, "bbox": list(b.bbox)} for b in im.boxes],
            }
            for im in images
        ]
    }
    util.write_json(path, payload)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]  # (pred index, gt index)
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


def match_detections(
    gts: Sequence[GtBox],
    preds: Sequence[Detection],
    *,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Greedy one-to-one matching, most confident prediction first.

    Ties on confidence fall back to input order; a prediction claims the
    free ground-truth box with the highest IoU (ties: lowest index).
    Matching ignores labels entirely.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    gt_taken = [False] * len(gts)
    pairs = []
    matched_pred = [False] * len(preds)
    for i in order:
        best_j = -1
        best_iou = 0.0
        for j in range(len(gts)):
            if gt_taken[j]:
                continue
            overlap = iou(preds[i].bbox, gts[j].bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0:
            gt_taken[best_j] = True
            matched_pred[i] = True
            pairs.append((i, best_j))
    pairs.sort()
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(len(preds)) if not matched_pred[i]),
        unmatched_gts=tuple(j for j in range(len(gts)) if not gt_taken[j]),
    )


@dataclass(frozen=True)
class GroupMetrics:
    group: str
    labels: tuple[str, ...]
    gt_count: int
    correctly_identified: int
    undetected: int
    misclassified: int
    falsely_detected: int

    @property
    def rate_correct(self) -> float:
        return self.correctly_identified / self.gt_count if self.gt_count else 0.0

    @property
    def rate_undetected(self) -> float:
        return self.undetected / self.gt_count if self.gt_count else 0.0

    @property
    def rate_misclassified(self) -> float:
        return self.misclassified / self.gt_count if self.gt_count else 0.0

    @property
    def rate_falsely_detected(self) -> float:
        return self.falsely_detected / self.gt_count if self.gt_count else 0.0

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "gt_count": self.gt_count,
            "correctly_identified": self.correctly_identified,
            "undetected": self.undetected,
            "misclassified": self.misclassified,
            "falsely_detected": self.falsely_detected,
            "rate_correct": self.rate_correct,
            "rate_undetected": self.rate_undetected,
            "rate_misclassified": self.rate_misclassified,
            "rate_falsely_detected": self.rate_falsely_detected,
        }


def compute_metrics(
    gt_images: Sequence[GtImage],
    detections_by_ref: Mapping[str, Sequence[Detection]],
    *,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    groups: Mapping[str, tuple[str, ...]] = DEFAULT_GROUPS,
) -> dict[str, GroupMetrics]:
    """Score detections against labels, per group, across all labeled images.

    Images are paired by image_ref; a labeled image with no detections
    entry counts as having none. Detections for unlabeled images are
    outside the ground truth and ignored.
    """
    tallies = {
        name: {"gt": 0, "correct": 0, "undetected": 0, "misclassified": 0, "false": 0}
        for name in groups
    }
    label_to_group: dict[str, str] = {}
    for name, labels in groups.items():
        for label in labels:
            if label in label_to_group:
                raise ValueError(f"label {label!r} appears in two groups")
            label_to_group[label] = name

    for gt_image in gt_images:
        preds = list(detections_by_ref.get(gt_image.image_ref, ()))
        match = match_detections(gt_image.boxes, preds, iou_threshold=iou_threshold)
        matched_gt_to_pred = {j: i for i, j in match.pairs}
        for j, gt_box in enumerate(gt_image.boxes):
            group = label_to_group.get(gt_box.label)
            if group is None:
                continue
            t = tallies[group]
            t["gt"] += 1
            i = matched_gt_to_pred.get(j)
            if i is None:
                t["undetected"] += 1
            elif label_to_group.get(preds[i].label) == group:
                t["correct"] += 1
            else:
                t["misclassified"] += 1
        # false detections: group members that claimed no ground truth of the group
        matched_pred_to_gt = {i: j for i, j in match.pairs}
        for i, pred in enumerate(preds):
            group = label_to_group.get(pred.label)
            if group is None:
                continue
            j = matched_pred_to_gt.get(i)
            if j is None or label_to_group.get(gt_image.boxes[j].label) != group:
                tallies[group]["false"] += 1

    out = {}
    for name, labels in groups.items():
        t = tallies[name]
        out[name] = GroupMetrics(
            group=name,
            labels=tuple(labels),
            gt_count=t["gt"],
            correctly_identified=t["correct"],
            undetected=t["undetected"],
            misclassified=t["misclassified"],
            falsely_detected=t["false"],
        )
    return out


def metrics_report(
    metrics: Mapping[str, GroupMetrics],
    *,
    iou_threshold: float,
    n_images: int,
) -> dict:
    return {
        "iou_threshold": iou_threshold,
        "n_images": n_images,
        "groups": {name: m.to_dict() for name, m in sorted(metrics.items())},
    }
