"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 7461
    model: str = "saliency"
    max_connections: int = 8

    def __post_init__(self) -> None:
        if self.max_connections < 1:
            raise ValueError(f"max_connections must be >= 1, got {self.max_connections}")
