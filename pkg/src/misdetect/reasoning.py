"""Chain-of-thought generation and judged teacher distillation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

from .backends.base import BackendError, CompletionBackend, CompletionRequest, Message, Sampling
from .labels import CompositeLabel, DatasetRecord, QueryTriplet
from .templates import PromptTemplate, label_slots, load_template

log = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 4
TEACHER_TEMPERATURE = 0.8
JUDGE_SCORE_RANGE = (0.0, 10.0)
JUDGE_REPROMPT = "Your previous reply could not be read. Reply with a single number between 0 and 10 and nothing else."

_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")


class ReasoningError(RuntimeError):
    def __init__(self, instance_id: str, message: str):
        super().__init__(f"instance {instance_id}: {message}")
        self.instance_id = instance_id


class JudgeParseError(ReasoningError):
    def __init__(self, instance_id: str, raw: Sequence[str]):
        super().__init__(instance_id, f"unparsable judge response(s): {list(raw)!r}")
        self.raw = list(raw)


@dataclass(frozen=True)
class ReasoningTrace:
    text: str
    instance_id: str
    producer: str
    candidate_index: int | None = None
    judge_score: float | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"instance {self.instance_id}: reasoning text is empty")


@dataclass(frozen=True)
class CandidateSet:
    instance_id: str
    candidates: tuple[ReasoningTrace, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidate set needs at least one candidate")
        if any(c.instance_id != self.instance_id for c in self.candidates):
            raise ValueError("all candidates must share the set's instance_id")


@dataclass(frozen=True)
class JudgeVerdict:
    candidate_index: int
    score: float
    rationale_text: str = ""


@dataclass(frozen=True)
class DistilledRecord:
    record: DatasetRecord
    reasoning: ReasoningTrace

    def __post_init__(self) -> None:
        if self.reasoning.judge_score is None:
            raise ValueError("distilled reasoning must carry a judge score")
        if self.reasoning.instance_id != self.record.instance_id:
            raise ValueError("reasoning instance_id does not match its record")

    def to_json(self) -> dict:
        return {**self.record.to_json(), "reasoning": self.reasoning.text, "judge_score": self.reasoning.judge_score}


@dataclass
class Failure:
    instance_id: str
    stage: str
    error: str

    def to_json(self) -> dict:
        return {"instance_id": self.instance_id, "stage": self.stage, "error": self.error}


@dataclass
class DistillationResult:
    records: list[DistilledRecord] = field(default_factory=list)
    failures: list[Failure] = field(default_factory=list)


def triplet_slots(triplet: QueryTriplet) -> dict[str, str]:
    return {"q_text": triplet.question_text, "mc_answer": triplet.chosen_answer, "explanation": triplet.explanation}


def _label_slots(label: CompositeLabel) -> dict[str, str]:
    return label_slots(label.correctness, label.reasoning_type.value, label.misconception)


def derive_seed(seed: int, instance_id: str, index: int) -> int:
    """Per-candidate seed, independent of scheduling order."""
    blob = f"{seed}\x1f{instance_id}\x1f{index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big") & 0x7FFFFFFF


def _complete_nonempty(backend: CompletionBackend, request: CompletionRequest, instance_id: str, what: str) -> str:
    # one retry on an empty completion
    for attempt in (1, 2):
        text = backend.complete(request).text
        if text.strip():
            return text
        log.warning("empty %s completion for instance %s (attempt %d)", what, instance_id, attempt)
    raise ReasoningError(instance_id, f"{what} returned an empty completion twice")


def generate_reasoning(
    triplet: QueryTriplet,
    reasoner: CompletionBackend,
    *,
    template: PromptTemplate | None = None,
    max_tokens: int = 1024,
) -> ReasoningTrace:
    template = template or load_template("reasoner")
    request = CompletionRequest(
        messages=template.messages(triplet_slots(triplet)),
        sampling=Sampling(temperature=0.0, seed=0, max_tokens=max_tokens),
    )
    text = _complete_nonempty(reasoner, request, triplet.instance_id, "reasoner")
    return ReasoningTrace(text=text, instance_id=triplet.instance_id, producer=reasoner.model_id)


def teacher_request(record: DatasetRecord, template: PromptTemplate, seed: int, max_tokens: int = 1024) -> CompletionRequest:
    slots = {**triplet_slots(record.triplet), **_label_slots(record.label)}
    return CompletionRequest(
        messages=template.messages(slots),
        sampling=Sampling(temperature=TEACHER_TEMPERATURE, seed=seed, max_tokens=max_tokens),
    )


def generate_candidates(
    record: DatasetRecord,
    teacher: CompletionBackend,
    m: int = DEFAULT_CANDIDATES,
    seed: int = 0,
    *,
    template: PromptTemplate | None = None,
) -> CandidateSet:
    if m < 1:
        raise ValueError("m must be >= 1")
    template = template or load_template("teacher")
    iid = record.instance_id
    out = []
    for index in range(m):
        request = teacher_request(record, template, derive_seed(seed, iid, index))
        try:
            text = _complete_nonempty(teacher, request, iid, f"teacher candidate {index}")
        except BackendError as exc:
            log.warning("teacher candidate %d for %s failed, retrying: %s", index, iid, exc)
            try:
                text = _complete_nonempty(teacher, request, iid, f"teacher candidate {index}")
            except BackendError as exc2:
                raise ReasoningError(iid, f"teacher candidate {index} failed: {exc2}") from exc2
        out.append(ReasoningTrace(text=text, instance_id=iid, producer=teacher.model_id, candidate_index=index))
    return CandidateSet(iid, tuple(out))


def parse_judge_score(text: str) -> float | None:
    """First number in ``text`` if it is finite and within the 0..10 scale."""
    match = _NUMBER.search(text)
    if match is None:
        return None
    value = float(match.group(0))
    lo, hi = JUDGE_SCORE_RANGE
    if not math.isfinite(value) or not lo <= value <= hi:
        return None
    return value


def judge_request(record: DatasetRecord, candidate: ReasoningTrace, template: PromptTemplate) -> CompletionRequest:
    slots = {**triplet_slots(record.triplet), **_label_slots(record.label), "thought": candidate.text}
    return CompletionRequest(messages=template.messages(slots), sampling=Sampling(temperature=0.0, seed=0, max_tokens=16))


def judge_reprompt(request: CompletionRequest, raw: str) -> CompletionRequest:
    messages = (*request.messages, Message("assistant", raw), Message("user", JUDGE_REPROMPT))
    return replace(request, messages=messages)


def judge_candidates(
    candidates: CandidateSet,
    record: DatasetRecord,
    judge: CompletionBackend,
    *,
    template: PromptTemplate | None = None,
) -> tuple[ReasoningTrace, list[JudgeVerdict]]:
    """Score every candidate and return the argmax (lowest index wins ties)."""
    template = template or load_template("judge")
    verdicts = []
    for pos, cand in enumerate(candidates.candidates):
        request = judge_request(record, cand, template)
        raw = judge.complete(request).text
        score = parse_judge_score(raw)
        if score is None:
            raw2 = judge.complete(judge_reprompt(request, raw)).text
            score = parse_judge_score(raw2)
            if score is None:
                raise JudgeParseError(record.instance_id, [raw, raw2])
            raw = raw2
        index = cand.candidate_index if cand.candidate_index is not None else pos
        verdicts.append(JudgeVerdict(candidate_index=index, score=score, rationale_text=raw))

    best = 0
    for pos, v in enumerate(verdicts):
        if v.score > verdicts[best].score:
            best = pos
    winner = replace(candidates.candidates[best], judge_score=verdicts[best].score)
    return winner, verdicts


def distill_record(
    record: DatasetRecord,
    teacher: CompletionBackend,
    judge: CompletionBackend,
    m: int,
    seed: int,
    *,
    teacher_template: PromptTemplate | None = None,
    judge_template: PromptTemplate | None = None,
) -> DistilledRecord:
    cands = generate_candidates(record, teacher, m, seed, template=teacher_template)
    winner, _ = judge_candidates(cands, record, judge, template=judge_template)
    return DistilledRecord(record, winner)


def build_distilled_dataset(
    records: Sequence[DatasetRecord],
    teacher: CompletionBackend,
    judge: CompletionBackend,
    m: int = DEFAULT_CANDIDATES,
    seed: int = 0,
    *,
    workers: int = 1,
) -> DistillationResult:
    """Distill every record; failures are collected, output keeps input order."""
    teacher_t = load_template("teacher")
    judge_t = load_template("judge")

    def work(rec: DatasetRecord) -> DistilledRecord | Failure:
        try:
            return distill_record(rec, teacher, judge, m, seed, teacher_template=teacher_t, judge_template=judge_t)
        except JudgeParseError as exc:
            return Failure(rec.instance_id, "judge", str(exc))
        except (ReasoningError, BackendError) as exc:
            return Failure(rec.instance_id, "generate", str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, records))
    else:
        outcomes = [work(r) for r in records]

    result = DistillationResult()
    for item in outcomes:
        (result.failures if isinstance(item, Failure) else result.records).append(item)
    return result


def write_distilled(records: Iterable[DistilledRecord], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_distilled(fh: IO[str], producer: str = "distilled") -> list[DistilledRecord]:
    out = []
    for line in fh:
        if not line.strip():
            continue
        obj = json.loads(line)
        rec = DatasetRecord.from_json(obj)
        trace = ReasoningTrace(obj["reasoning"], rec.instance_id, producer, judge_score=float(obj["judge_score"]))
        out.append(DistilledRecord(rec, trace))
    return out


def write_sft(records: Iterable[DistilledRecord], fh: IO[str], template: PromptTemplate | None = None) -> None:
    """Export in the conversational ``{system, user, assistant}`` layout for student fine-tuning."""
    template = template or load_template("reasoner")
    for rec in records:
        msgs = template.messages(triplet_slots(rec.record.triplet))
        row = {m.role: m.content for m in msgs}
        row["assistant"] = rec.reasoning.text
        fh.write(json.dumps({"system": row["system"], "user": row["user"], "assistant": row["assistant"]}, ensure_ascii=False) + "\n")
