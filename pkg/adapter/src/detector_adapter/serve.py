"""Request handling and the two wire transports.

The wire protocol is one JSON object per request:

    {"image_path": "/abs/path.png", "width": 640, "height": 480}

answered by either

    {"detections": [{"label": ..., "confidence": ..., "bbox": [x, y, w, h]}]}

or an error object {"error": "..."} when the request cannot be served.
A bad request never kills the process; only model construction may.
"""
from __future__ import annotations

import json
import logging
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from PIL import Image, UnidentifiedImageError

from .config import AdapterConfig, AdapterError
from .labels import map_label
from .models import BlobModel, TorchvisionModel

log = logging.getLogger("detector_adapter")


def build_model(cfg: AdapterConfig):
    """Construct the configured model. Raises AdapterError on load failure."""
    if cfg.model == "blob":
        return BlobModel(score_floor=cfg.score_floor)
    assert cfg.checkpoint is not None  # validate() enforces this
    return TorchvisionModel(
        cfg.checkpoint,
        arch=cfg.model,
        device=cfg.device,
        score_floor=cfg.score_floor,
    )


def handle_request(model, request: Any) -> dict:
    """Answer one decoded request object. Never raises."""
    if not isinstance(request, dict):
        return {"error": "request must be a JSON object"}
    image_path = request.get("image_path")
    if not isinstance(image_path, str) or not image_path:
        return {"error": "request is missing image_path"}
    try:
        with Image.open(image_path) as im:
            im.load()
            raw = model.predict(im)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        return {"error": f"cannot read image {image_path!r}: {exc}"}
    detections = []
    for native, score, (x, y, w, h) in raw:
        detections.append(
            {
                "label": map_label(native),
                "confidence": min(max(float(score), 0.0), 1.0),
                "bbox": [float(x), float(y), float(w), float(h)],
            }
        )
    return {"detections": detections}


def serve_stdio(model, stdin=None, stdout=None) -> None:
    """Serve newline-delimited JSON requests until stdin closes.

    Requests are handled strictly one at a time in arrival order. A line
    that is not valid JSON gets an error object and the loop continues.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {"error": f"bad request line: {exc}"}
        else:
            response = handle_request(model, request)
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()


def make_http_server(model, port: int) -> ThreadingHTTPServer:
    """HTTP transport: POST /detect with a JSON request body.

    The server is threaded but predictions are serialized through a lock,
    so concurrent clients see the same ordering guarantees as stdio.
    """
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path.rstrip("/") != "/detect":
                self._reply(404, {"error": f"no such endpoint {self.path!r}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                request = json.loads(self.rfile.read(length).decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                self._reply(400, {"error": f"bad request body: {exc}"})
                return
            with lock:
                response = handle_request(model, request)
            self._reply(200, response)

        def _reply(self, status: int, payload: dict):
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, format, *args):
            log.debug("http: " + format, *args)

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)
