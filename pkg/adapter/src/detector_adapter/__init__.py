"""Reference detector backend.

Serves object detections over the line-JSON stdio protocol or HTTP POST
/detect, mapping whatever the underlying model emits onto the closed label
set {car, truck, bus, motorcycle, other}. Ships two models: a deterministic
luminance-blob segmenter with no learned weights (the conformance
reference) and a wrapper that restores a torchvision detection model from
a local checkpoint.
"""

from .config import AdapterConfig, AdapterError
from .labels import OUTPUT_LABELS, map_label
from .models import BlobModel, TorchvisionModel
from .serve import build_model, handle_request, make_http_server, serve_stdio

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "OUTPUT_LABELS",
    "map_label",
    "BlobModel",
    "TorchvisionModel",
    "build_model",
    "handle_request",
    "make_http_server",
    "serve_stdio",
]
