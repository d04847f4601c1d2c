"""Small in-process backends for unit tests."""

from __future__ import annotations

import threading

from misdetect.backends.base import Completion, CompletionRequest


class ScriptBackend:
    """Completion backend driven by a function of the request."""

    def __init__(self, fn, model_id="script"):
        self.fn = fn
        self.model_id = model_id
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            self.requests.append(request)
        out = self.fn(request)
        return out if isinstance(out, Completion) else Completion(text=out)


def judge_by_thought(scores: dict[str, str]):
    """Judge replying with ``scores[thought]`` where thought follows 'ANALYSIS:'."""

    def fn(request):
        thought = request.messages[1].content.split("ANALYSIS:\n", 1)[1]
        return scores[thought]

    return ScriptBackend(fn, "judge")
