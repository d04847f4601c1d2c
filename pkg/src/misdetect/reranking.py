"""Yes/No verification reranking, negative augmentation and the rerank loss."""

from __future__ import annotations

import enum
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .backends.base import BackendError, CompletionBackend, CompletionRequest, Message, Sampling
from .labels import CompositeLabel, LabelSpace, QueryTriplet
from .ranking import ScoredRanking
from .reasoning import DistilledRecord, ReasoningTrace, derive_seed, triplet_slots
from .templates import PromptTemplate, label_slots, load_template

YES, NO = "Yes", "No"
DEFAULT_NEGATIVES = 3
CE_EPS = 1e-12


class RerankError(RuntimeError):
    def __init__(self, instance_id: str, label: CompositeLabel, cause: Exception):
        super().__init__(f"instance {instance_id}: scoring {label.canonical} failed: {cause}")
        self.instance_id = instance_id
        self.label = label


class Target(str, enum.Enum):
    YES = YES
    NO = NO


class Origin(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class VerificationPrompt:
    rendered_text: str
    slots: dict
    messages: tuple[Message, ...]
    template_version: str


@dataclass(frozen=True)
class TokenScore:
    yes_logprob: float
    no_logprob: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.yes_logprob) and math.isfinite(self.no_logprob)):
            raise ValueError(f"token scores must be finite, got {self.yes_logprob!r}, {self.no_logprob!r}")


@dataclass(frozen=True)
class AugmentedExample:
    prompt: VerificationPrompt
    target: Target
    origin: Origin
    source_instance_id: str

    def __post_init__(self) -> None:
        expected = Target.YES if self.origin is Origin.POSITIVE else Target.NO
        if self.target is not expected:
            raise ValueError(f"{self.origin.value} example must have target {expected.value}")

    def to_json(self) -> dict:
        return {
            "instance_id": self.source_instance_id,
            "prompt": self.prompt.rendered_text,
            "target": self.target.value,
            "origin": self.origin.value,
        }


def build_prompt(
    triplet: QueryTriplet,
    reasoning: ReasoningTrace | str,
    candidate: CompositeLabel,
    template: PromptTemplate | None = None,
) -> VerificationPrompt:
    template = template or load_template("verification")
    thought = reasoning.text if isinstance(reasoning, ReasoningTrace) else reasoning
    if not thought.strip():
        raise ValueError("reasoning text is empty")
    slots = {
        **triplet_slots(triplet),
        **label_slots(candidate.correctness, candidate.reasoning_type.value, candidate.misconception),
        "thought": thought,
    }
    return VerificationPrompt(
        rendered_text=template.render(slots),
        slots=slots,
        messages=template.messages(slots),
        template_version=f"{template.name}/{template.version}",
    )


def score_candidate(prompt: VerificationPrompt, reranker: CompletionBackend) -> TokenScore:
    request = CompletionRequest(
        messages=prompt.messages,
        sampling=Sampling(temperature=0.0, seed=0, max_tokens=1),
        logprob_targets=(YES, NO),
    )
    lp = reranker.complete(request).first_token_logprobs
    if YES not in lp or NO not in lp:
        raise BackendError(f"reranker did not score both {YES!r} and {NO!r}: got {sorted(lp)}")
    return TokenScore(lp[YES], lp[NO])


def logit_margin(score: TokenScore) -> float:
    return score.yes_logprob - score.no_logprob


def rerank_candidates(
    triplet: QueryTriplet,
    reasoning: ReasoningTrace | str,
    candidates: ScoredRanking | Sequence[CompositeLabel],
    reranker: CompletionBackend,
    *,
    template: PromptTemplate | None = None,
    workers: int = 1,
) -> ScoredRanking:
    """Score each candidate by its Yes/No margin; any failure aborts the instance."""
    labels = candidates.labels if isinstance(candidates, ScoredRanking) else list(candidates)
    if not labels:
        raise ValueError("rerank_candidates needs at least one candidate")
    template = template or load_template("verification")

    def one(label: CompositeLabel) -> float:
        try:
            return logit_margin(score_candidate(build_prompt(triplet, reasoning, label, template), reranker))
        except (BackendError, ValueError) as exc:
            raise RerankError(triplet.instance_id, label, exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            margins = list(pool.map(one, labels))
    else:
        margins = [one(lab) for lab in labels]
    return ScoredRanking.from_scores(zip(labels, margins))


def sample_negatives(true_label: CompositeLabel, space: LabelSpace | Sequence[CompositeLabel], m: int, seed: int) -> list[CompositeLabel]:
    pool = [lab for lab in space if lab != true_label]
    if m < 0:
        raise ValueError("m must be >= 0")
    if len(pool) < m:
        raise ValueError(f"label space has {len(pool)} labels other than {true_label.canonical}, need {m}")
    return random.Random(seed).sample(pool, m)


def build_verification_dataset(
    distilled: Sequence[DistilledRecord],
    space: LabelSpace,
    m: int = DEFAULT_NEGATIVES,
    seed: int = 0,
    *,
    template: PromptTemplate | None = None,
) -> list[AugmentedExample]:
    """One positive then ``m`` negatives per record, records in input order."""
    template = template or load_template("verification")
    out: list[AugmentedExample] = []
    for d in distilled:
        rec = d.record
        iid = rec.instance_id
        out.append(AugmentedExample(build_prompt(rec.triplet, d.reasoning, rec.label, template), Target.YES, Origin.POSITIVE, iid))
        for neg in sample_negatives(rec.label, space, m, derive_seed(seed, iid, -1)):
            out.append(AugmentedExample(build_prompt(rec.triplet, d.reasoning, neg, template), Target.NO, Origin.NEGATIVE, iid))
    return out


def write_verification_dataset(examples: Iterable[AugmentedExample], fh: IO[str]) -> None:
    for ex in examples:
        fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


def write_verification_sft(examples: Iterable[AugmentedExample], fh: IO[str]) -> None:
    for ex in examples:
        row = {m.role: m.content for m in ex.prompt.messages}
        fh.write(json.dumps({"system": row["system"], "user": row["user"], "assistant": ex.target.value}, ensure_ascii=False) + "\n")


def rerank_cross_entropy(predicted: Sequence[float], targets: Sequence[Target | str]) -> float:
    """Mean binary cross-entropy of P(Yes) against Yes/No targets."""
    if len(predicted) != len(targets):
        raise ValueError(f"length mismatch: {len(predicted)} predictions, {len(targets)} targets")
    if not predicted:
        raise ValueError("rerank_cross_entropy needs at least one example")
    total = 0.0
    for p, t in zip(predicted, targets):
        p = min(max(float(p), CE_EPS), 1.0 - CE_EPS)
        y = 1.0 if Target(t) is Target.YES else 0.0
        total += -(y * math.log(p) + (1.0 - y) * math.log1p(-p))
    return total / len(predicted)
