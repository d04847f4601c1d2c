"""Embedding and completion backends: fixture replay and HTTP."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from .base import (
    BackendError,
    Completion,
    CompletionBackend,
    CompletionRequest,
    DimensionMismatchError,
    EmbeddingBackend,
    InFlightLimiter,
    LogprobError,
    Message,
    MissingFixtureError,
    Sampling,
    TransportError,
    request_key,
    text_key,
)
from .fixture import FixtureCompletionBackend, FixtureEmbeddingBackend
from .http import HttpCompletionBackend, HttpEmbeddingBackend


@dataclass
class BackendDescriptor:
    kind: Literal["fixture", "http"]
    endpoint: str
    model_id: str = ""
    timeout: float = 60.0
    max_in_flight: int = 4
    retry_budget: int = 2
    api_key_env: str | None = None
    token_variants: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("fixture", "http"):
            raise ValueError(f"backend kind must be 'fixture' or 'http', got {self.kind!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be a positive integer")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")
        if self.kind == "http" and not str(self.endpoint).startswith(("http://", "https://")):
            raise ValueError(f"http backend requires an endpoint URL, got {self.endpoint!r}")
        if not self.model_id:
            self.model_id = Path(self.endpoint).stem if self.kind == "fixture" else "default"

    def check_readable(self) -> None:
        if self.kind == "fixture" and not Path(self.endpoint).is_file():
            raise FileNotFoundError(f"fixture file not found: {self.endpoint}")


def make_embedding_backend(desc: BackendDescriptor) -> EmbeddingBackend:
    if desc.kind == "fixture":
        return FixtureEmbeddingBackend(path=desc.endpoint, model_id=desc.model_id, max_in_flight=desc.max_in_flight)
    return HttpEmbeddingBackend(
        desc.endpoint,
        desc.model_id,
        timeout=desc.timeout,
        max_in_flight=desc.max_in_flight,
        retry_budget=desc.retry_budget,
        api_key_env=desc.api_key_env,
    )


def make_completion_backend(desc: BackendDescriptor) -> CompletionBackend:
    if desc.kind == "fixture":
        return FixtureCompletionBackend(path=desc.endpoint, model_id=desc.model_id, max_in_flight=desc.max_in_flight)
    return HttpCompletionBackend(
        desc.endpoint,
        desc.model_id,
        timeout=desc.timeout,
        max_in_flight=desc.max_in_flight,
        retry_budget=desc.retry_budget,
        api_key_env=desc.api_key_env,
        token_variants=desc.token_variants,
    )


__all__ = [
    "BackendDescriptor",
    "BackendError",
    "Completion",
    "CompletionBackend",
    "CompletionRequest",
    "DimensionMismatchError",
    "EmbeddingBackend",
    "FixtureCompletionBackend",
    "FixtureEmbeddingBackend",
    "HttpCompletionBackend",
    "HttpEmbeddingBackend",
    "InFlightLimiter",
    "LogprobError",
    "Message",
    "MissingFixtureError",
    "Sampling",
    "TransportError",
    "make_completion_backend",
    "make_embedding_backend",
    "request_key",
    "text_key",
]
