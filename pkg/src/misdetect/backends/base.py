"""Backend contracts shared by the fixture and HTTP implementations."""

from __future__ import annotations

import hashlib
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol, Sequence, runtime_checkable

import numpy as np

ROLES = ("system", "user", "assistant")


class BackendError(RuntimeError):
    """Any failure raised by a backend."""


class TransportError(BackendError):
    """Transport-level failure that survived the retry budget."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class MissingFixtureError(BackendError, KeyError):
    def __init__(self, key: str, path: Path | str | None = None):
        where = f" in {path}" if path else ""
        super().__init__(f"no fixture entry for key {key}{where}")
        self.key = key

    def __str__(self) -> str:
        return self.args[0]


class LogprobError(BackendError):
    """Requested first-token log-probabilities are missing or unsupported."""


class DimensionMismatchError(BackendError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 1024


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    sampling: Sampling = field(default_factory=Sampling)
    logprob_targets: tuple[str, ...] | None = None

    def key(self) -> str:
        return request_key(self)


@dataclass(frozen=True)
class Completion:
    text: str
    first_token_logprobs: dict[str, float] = field(default_factory=dict)


def request_key(request: CompletionRequest) -> str:
    """Stable hash of the canonicalized request (messages and sampling seed)."""
    canon = {
        "messages": [[m.role, m.content] for m in request.messages],
        "seed": request.sampling.seed,
    }
    blob = json.dumps(canon, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class InFlightLimiter:
    """Bounded semaphore that also records the peak concurrency observed."""

    def __init__(self, max_in_flight: int):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be positive")
        self.max_in_flight = max_in_flight
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    @contextmanager
    def slot(self) -> Iterator[None]:
        with self._sem:
            with self._lock:
                self.current += 1
                self.peak = max(self.peak, self.current)
            try:
                yield
            finally:
                with self._lock:
                    self.current -= 1


@runtime_checkable
class EmbeddingBackend(Protocol):
    model_id: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@runtime_checkable
class CompletionBackend(Protocol):
    model_id: str

    def complete(self, request: CompletionRequest) -> Completion: ...


def check_dimensions(vectors: Sequence[np.ndarray]) -> None:
    if not vectors:
        return
    dim = len(vectors[0])
    for i, v in enumerate(vectors):
        if v.ndim != 1 or len(v) != dim:
            raise DimensionMismatchError(f"vector {i} has shape {v.shape}, expected ({dim},)")
