from __future__ import annotations

from dataclasses import dataclass


class AdapterError(Exception):
    """Unrecoverable adapter failure (bad config, unloadable model)."""


@dataclass(frozen=True)
class AdapterConfig:
    """What to serve and how.

    model is either "blob" (the built-in reference segmenter) or the name
    of a torchvision detection architecture, in which case checkpoint must
    point at a local weights file. Exactly one transport is selected:
    stdio, or http on a port.
    """

    model: str = "blob"
    checkpoint: str | None = None
    score_floor: float = 0.5
    device: str = "cpu"
    transport: str = "stdio"
    port: int | None = None

    def validate(self) -> None:
        if not self.model:
            raise AdapterError("model must not be empty")
        if self.model != "blob" and not self.checkpoint:
            raise AdapterError(f"model {self.model!r} needs a local checkpoint path")
        if not 0.0 <= self.score_floor <= 1.0:
            raise AdapterError(f"score floor must be in [0, 1], got {self.score_floor}")
        if self.transport == "stdio":
            if self.port is not None:
                raise AdapterError("port only applies to the http transport")
        elif self.transport == "http":
            if self.port is None or not 0 <= self.port <= 65535:
                raise AdapterError(f"http transport needs a port in [0, 65535], got {self.port}")
        else:
            raise AdapterError(f"unknown transport {self.transport!r}")
