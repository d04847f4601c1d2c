"""Deterministic replay backends backed by line-oriented JSON fixture files.

Completion fixtures hold one ``{"key", "text", "logprobs"}`` object per line,
where ``key`` is :func:`request_key` of the request being answered. Embedding
fixtures hold ``{"key", "vector"}`` with ``key = sha256(text)``. Both accept an
optional free-form ``note`` field for humans editing the files.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .base import (
    Completion,
    CompletionRequest,
    InFlightLimiter,
    LogprobError,
    MissingFixtureError,
    check_dimensions,
    request_key,
    text_key,
)


def _load_lines(path: Path) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"fixture file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class FixtureCompletionBackend:
    def __init__(
        self,
        entries: Mapping[str, Mapping] | None = None,
        *,
        path: Path | str | None = None,
        model_id: str = "fixture",
        max_in_flight: int = 8,
        latency: float = 0.0,
    ):
        self.path = Path(path) if path is not None else None
        table: dict[str, Mapping] = dict(entries or {})
        if self.path is not None:
            for obj in _load_lines(self.path):
                table[obj["key"]] = obj
        self._table = table
        self.model_id = model_id
        self.limiter = InFlightLimiter(max_in_flight)
        self.latency = latency
        self.calls = 0

    @classmethod
    def from_file(cls, path: Path | str, **kwargs) -> FixtureCompletionBackend:
        return cls(path=path, **kwargs)

    def complete(self, request: CompletionRequest) -> Completion:
        key = request_key(request)
        with self.limiter.slot():
            self.calls += 1
            if self.latency:
                time.sleep(self.latency)
            try:
                entry = self._table[key]
            except KeyError:
                raise MissingFixtureError(key, self.path) from None
        logprobs = {str(k): float(v) for k, v in (entry.get("logprobs") or {}).items()}
        if request.logprob_targets is not None:
            missing = [t for t in request.logprob_targets if t not in logprobs]
            if missing:
                raise LogprobError(f"fixture {key} does not score target token(s) {missing}")
            logprobs = {t: logprobs[t] for t in request.logprob_targets}
        return Completion(text=str(entry.get("text", "")), first_token_logprobs=logprobs)


class FixtureEmbeddingBackend:
    def __init__(
        self,
        entries: Mapping[str, Sequence[float]] | None = None,
        *,
        path: Path | str | None = None,
        model_id: str = "fixture-embedder",
        max_in_flight: int = 8,
    ):
        self.path = Path(path) if path is not None else None
        table = {k: np.asarray(v, dtype=np.float64) for k, v in (entries or {}).items()}
        if self.path is not None:
            for obj in _load_lines(self.path):
                table[obj["key"]] = np.asarray(obj["vector"], dtype=np.float64)
        self._table = table
        self.model_id = model_id
        self.limiter = InFlightLimiter(max_in_flight)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        out = []
        with self.limiter.slot():
            for text in texts:
                key = text_key(text)
                try:
                    out.append(self._table[key].copy())
                except KeyError:
                    raise MissingFixtureError(key, self.path) from None
        check_dimensions(out)
        return out


def completion_fixture_line(
    request: CompletionRequest, text: str, logprobs: Mapping[str, float] | None = None, note: str | None = None
) -> dict:
    obj: dict = {"key": request_key(request), "text": text, "logprobs": dict(logprobs or {})}
    if note:
        obj["note"] = note
    return obj


def embedding_fixture_line(text: str, vector: Iterable[float], note: str | None = None) -> dict:
    obj: dict = {"key": text_key(text), "vector": [float(x) for x in vector]}
    if note:
        obj["note"] = note
    return obj


def write_fixture(lines: Iterable[Mapping], fh: IO[str]) -> None:
    for obj in lines:
        fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
