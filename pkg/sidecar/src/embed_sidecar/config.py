"""Sidecar configuration: model selectors, transport, and preprocessing caps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

TRANSPORTS = ("stdio", "socket")


@dataclass(frozen=True)
class SidecarConfig:
    """Everything the server needs to pick models and answer the handshake."""

    detector: str = "lbp-frontal-face"
    grounder: str = "color-keyword"
    embedder: str = "patch-rgb-8x8"
    device: str = "cpu"
    transport: str = "stdio"
    socket_path: str | None = None
    max_image_dim: int = 512
    grounding_threshold: float = 0.35

    def __post_init__(self):
        if self.transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.transport == "socket" and not self.socket_path:
            raise ValueError("socket transport requires socket_path")
        if self.max_image_dim < 16:
            raise ValueError("max_image_dim must be at least 16")
        if not 0.0 <= self.grounding_threshold <= 1.0:
            raise ValueError("grounding_threshold must lie in [0, 1]")

    @classmethod
    def from_file(cls, path: Path | str) -> "SidecarConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)
