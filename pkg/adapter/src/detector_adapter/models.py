from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import AdapterError
from .labels import category_name

# a raw model detection: native label, score, bbox as (x, y, w, h) pixels
RawDetection = tuple[str, float, tuple[float, float, float, float]]


class BlobModel:
    """Deterministic reference detector with no learned weights.

    Segments bright connected components against a darker background and
    labels them by size and shape. Not a real detector; it exists so the
    protocol, label mapping and serving layers can be exercised with a
    model whose output is exactly reproducible.
    """

    def __init__(self, *, score_floor: float = 0.0, threshold: int = 180, min_area: int = 24):
        self.score_floor = score_floor
        self.threshold = threshold
        self.min_area = min_area

    def predict(self, image: Image.Image) -> list[RawDetection]:
        gray = np.asarray(image.convert("L"), dtype=np.float64)
        mask = gray >= self.threshold
        labeled, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        out: list[RawDetection] = []
        for index, slices in enumerate(ndimage.find_objects(labeled), start=1):
            if slices is None:
                continue
            area = int((labeled[slices] == index).sum())
            if area < self.min_area:
                continue
            y, x = slices[0].start, slices[1].start
            h = slices[0].stop - slices[0].start
            w = slices[1].stop - slices[1].start
            fill = area / (w * h)
            aspect = w / h
            if area >= 6000:
                native = "bus"
            elif aspect > 2.5:
                native = "truck"
            else:
                native = "car"
            score = round(min(0.99, 0.5 + 0.49 * fill), 4)
            if score < self.score_floor:
                continue
            out.append((native, score, (float(x), float(y), float(w), float(h))))
        out.sort(key=lambda d: (d[2][1], d[2][0]))
        return out


class TorchvisionModel:
    """A torchvision detection architecture restored from a local checkpoint.

    No weights are downloaded: checkpoint must be a local state-dict file.
    Which checkpoint is loaded decides detection quality; this wrapper only
    guarantees protocol shape, label mapping and eval-mode determinism.
    """

    def __init__(
        self,
        checkpoint: str,
        *,
        arch: str = "fasterrcnn_resnet50_fpn",
        device: str = "cpu",
        score_floor: float = 0.5,
        min_size: int = 800,
        max_size: int = 1333,
    ):
        try:
            import torch
            from torchvision.models import detection as tv_detection
        except ImportError as exc:
            raise AdapterError(f"model {arch!r} needs torch and torchvision installed: {exc}") from exc
        self._torch = torch
        builder = getattr(tv_detection, arch, None)
        if builder is None:
            raise AdapterError(f"torchvision has no detection architecture named {arch!r}")
        try:
            model = builder(
                weights=None,
                weights_backbone=None,
                num_classes=91,
                min_size=min_size,
                max_size=max_size,
                box_score_thresh=score_floor,
            )
            state = torch.load(checkpoint, map_location=device)
            if isinstance(state, dict) and "model" in state and not hasattr(state["model"], "shape"):
                state = state["model"]  # training checkpoints wrap the state dict
            model.load_state_dict(state)
        except (OSError, RuntimeError, ValueError) as exc:
            raise AdapterError(f"cannot load checkpoint {checkpoint!r} for {arch}: {exc}") from exc
        torch.manual_seed(0)
        self.model = model.to(device).eval()
        self.device = device

    def predict(self, image: Image.Image) -> list[RawDetection]:
        torch = self._torch
        arr = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
        tensor = torch.from_numpy(arr).permute(2, 0, 1).to(self.device)
        with torch.no_grad():
            result = self.model([tensor])[0]
        out: list[RawDetection] = []
        for box, label_id, score in zip(
            result["boxes"].tolist(), result["labels"].tolist(), result["scores"].tolist()
        ):
            x1, y1, x2, y2 = box
            if x2 <= x1 or y2 <= y1:
                continue  # degenerate proposals appear on random-weight models
            score = min(max(float(score), 0.0), 1.0)
            out.append((category_name(int(label_id)), score, (x1, y1, x2 - x1, y2 - y1)))
        return out
