"""Clients for OpenAI-compatible ``/chat/completions`` and ``/embeddings`` servers.

Request and response shapes are documented in ``docs/wire_format.md``.
"""

from __future__ import annotations

import logging
import math
import os
from typing import Any, Mapping, Sequence

import httpx
import numpy as np

from .base import (
    BackendError,
    Completion,
    CompletionRequest,
    InFlightLimiter,
    LogprobError,
    TransportError,
    check_dimensions,
)

log = logging.getLogger(__name__)

_RETRY_STATUS = {408, 429, 500, 502, 503, 504}


def default_variants(target: str) -> tuple[str, ...]:
    return (target, " " + target)


class _HttpBase:
    def __init__(
        self,
        endpoint: str,
        model_id: str,
        *,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        retry_budget: int = 2,
        api_key_env: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        if not endpoint:
            raise ValueError("http backend requires an endpoint URL")
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.retry_budget = retry_budget
        self.limiter = InFlightLimiter(max_in_flight)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: Mapping[str, Any]) -> dict:
        url = f"{self.endpoint}{path}"
        attempts = 0
        last = ""
        with self.limiter.slot():
            while attempts <= self.retry_budget:
                attempts += 1
                try:
                    resp = self._client.post(url, json=payload)
                except httpx.TransportError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    log.warning("POST %s failed on attempt %d: %s", url, attempts, last)
                    continue
                if resp.status_code in _RETRY_STATUS:
                    last = f"HTTP {resp.status_code}"
                    log.warning("POST %s returned %d on attempt %d", url, resp.status_code, attempts)
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"POST {url} returned HTTP {resp.status_code}: {resp.text[:500]}")
                try:
                    return resp.json()
                except ValueError:
                    raise BackendError(f"POST {url} returned a non-JSON body: {resp.text[:500]}") from None
        raise TransportError(f"POST {url} failed: {last}", attempts)


class HttpCompletionBackend(_HttpBase):
    def __init__(
        self,
        endpoint: str,
        model_id: str,
        *,
        top_logprobs: int = 20,
        token_variants: Mapping[str, Sequence[str]] | None = None,
        **kwargs,
    ):
        super().__init__(endpoint, model_id, **kwargs)
        self.top_logprobs = top_logprobs
        self.token_variants = {k: tuple(v) for k, v in (token_variants or {}).items()}

    def build_payload(self, request: CompletionRequest) -> dict:
        s = request.sampling
        payload: dict[str, Any] = {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": s.temperature,
            "max_tokens": s.max_tokens,
            "stream": False,
        }
        if s.seed is not None:
            payload["seed"] = s.seed
        if request.logprob_targets is not None:
            payload["logprobs"] = True
            payload["top_logprobs"] = self.top_logprobs
        return payload

    def complete(self, request: CompletionRequest) -> Completion:
        data = self._post("/chat/completions", self.build_payload(request))
        try:
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError, AttributeError):
            raise BackendError(f"malformed chat completion response: {str(data)[:500]}") from None
        if request.logprob_targets is None:
            return Completion(text=text)
        alternatives = first_token_alternatives(choice)
        return Completion(text=text, first_token_logprobs=self._score_targets(request.logprob_targets, alternatives))

    def _score_targets(self, targets: Sequence[str], alternatives: Mapping[str, float]) -> dict[str, float]:
        scored: dict[str, float] = {}
        for target in targets:
            variants = self.token_variants.get(target) or default_variants(target)
            mass = sum(math.exp(alternatives[v]) for v in set(variants) if v in alternatives)
            if mass > 0.0:
                scored[target] = math.log(mass)
        if not scored:
            raise LogprobError(f"none of the target tokens {list(targets)} among first-token alternatives {sorted(alternatives)}")
        missing = [t for t in targets if t not in scored]
        if missing:
            raise LogprobError(f"target token(s) {missing} unscored; alternatives were {sorted(alternatives)}")
        return scored


def first_token_alternatives(choice: Mapping[str, Any]) -> dict[str, float]:
    """Map token string -> logprob for the first generated position."""
    logprobs = choice.get("logprobs")
    if not logprobs or not logprobs.get("content"):
        raise LogprobError("response carries no per-token log-probabilities; does the server support logprobs?")
    first = logprobs["content"][0]
    out = {alt["token"]: float(alt["logprob"]) for alt in first.get("top_logprobs") or []}
    out.setdefault(first["token"], float(first["logprob"]))
    return out


class HttpEmbeddingBackend(_HttpBase):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        data = self._post("/embeddings", {"model": self.model_id, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda d: d["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError):
            raise BackendError(f"malformed embeddings response: {str(data)[:500]}") from None
        if len(vectors) != len(texts):
            raise BackendError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        check_dimensions(vectors)
        return vectors
