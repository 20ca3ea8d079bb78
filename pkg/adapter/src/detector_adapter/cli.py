from __future__ import annotations

import argparse
import logging
import sys

from .config import AdapterConfig, AdapterError
from .serve import build_model, make_http_server, serve_stdio


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detector-adapter",
        description="Serve an object detection model over the detector wire protocol.",
    )
    parser.add_argument(
        "--model",
        default="blob",
        help="'blob' for the built-in reference model, or a torchvision "
        "detection architecture name (e.g. fasterrcnn_resnet50_fpn)",
    )
    parser.add_argument("--checkpoint", help="local state-dict file, required for torchvision models")
    parser.add_argument(
        "--score-floor",
        type=float,
        default=0.5,
        help="minimum confidence forwarded to the model (default 0.5)",
    )
    parser.add_argument("--device", default="cpu", help="device hint, e.g. cpu or cuda:0 (default cpu)")
    transport = parser.add_mutually_exclusive_group(required=True)
    transport.add_argument("--stdin", action="store_true", help="serve newline-delimited JSON on stdio")
    transport.add_argument("--http-port", type=int, help="serve HTTP POST /detect on this port")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = AdapterConfig(
        model=args.model,
        checkpoint=args.checkpoint,
        score_floor=args.score_floor,
        device=args.device,
        transport="stdio" if args.stdin else "http",
        port=args.http_port,
    )
    try:
        cfg.validate()
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        model = build_model(cfg)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if cfg.transport == "stdio":
        serve_stdio(model)
        return 0
    server = make_http_server(model, cfg.port or 0)
    logging.getLogger("detector_adapter").info(
        "listening on http://127.0.0.1:%d/detect", server.server_address[1]
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
