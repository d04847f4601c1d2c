"""End-to-end prediction: retrieve, reason, rerank, fuse."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .backends.base import BackendError, CompletionBackend, EmbeddingBackend
from .fusion import FusionConfig, fuse
from .labels import CompositeLabel, QueryTriplet, parse_label
from .ranking import ScoredRanking
from .reasoning import ReasoningError, ReasoningTrace, generate_reasoning
from .reranking import RerankError, rerank_candidates
from .retrieval import DEFAULT_K, EmbeddedDataset, embed_query, score_labels, top_k_labels
from .templates import PromptTemplate, load_template

# score given to labels whose only index entries were excluded (cosine lower bound)
UNSCORED = -1.0


class StageError(RuntimeError):
    def __init__(self, stage: str, instance_id: str, cause: BaseException):
        super().__init__(f"instance {instance_id} failed at stage {stage!r}: {cause}")
        self.stage = stage
        self.instance_id = instance_id
        self.cause = cause

    @property
    def is_backend_error(self) -> bool:
        return isinstance(self.cause, BackendError) or isinstance(self.cause.__cause__, BackendError)


@dataclass
class PipelineBackends:
    embedder: EmbeddingBackend
    reasoner: CompletionBackend
    reranker: CompletionBackend


@dataclass
class Prediction:
    instance_id: str
    fused: ScoredRanking
    retrieval: ScoredRanking
    rerank: ScoredRanking
    reasoning: ReasoningTrace

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            **self.fused.to_json(),
            "stages": {"retrieval": self.retrieval.to_json(), "rerank": self.rerank.to_json()},
            "reasoning": self.reasoning.text,
        }


def _append_rest(head: ScoredRanking, order: ScoredRanking) -> ScoredRanking:
    seen = set(head.labels)
    return ScoredRanking(head.items + tuple((lab, s) for lab, s in order if lab not in seen))


def predict(
    triplet: QueryTriplet,
    index: EmbeddedDataset,
    backends: PipelineBackends,
    k: int = DEFAULT_K,
    config: FusionConfig = FusionConfig(),
    *,
    exclude_instance_id: str | None = None,
    reasoner_template: PromptTemplate | None = None,
    verification_template: PromptTemplate | None = None,
) -> Prediction:
    """Full ranking over every label in the index.

    The first ``min(k, |labels|)`` positions are the fused top-k block; the
    remaining labels follow in retrieval-score order.
    """
    iid = triplet.instance_id
    try:
        query = embed_query(triplet, backends.embedder)
    except (BackendError, ValueError) as exc:
        raise StageError("embed", iid, exc) from exc
    try:
        table = score_labels(query, index, exclude_instance_id=exclude_instance_id)
    except (BackendError, ValueError) as exc:
        raise StageError("retrieve", iid, exc) from exc
    unscored = {lab: UNSCORED for lab in index.label_set if lab not in table}
    retrieval_full = _append_rest(ScoredRanking.from_scores(table), ScoredRanking.from_scores(unscored))
    y_k = top_k_labels(table, k) if table else ScoredRanking(retrieval_full.items[:k])

    try:
        reasoning = generate_reasoning(triplet, backends.reasoner, template=reasoner_template)
    except (BackendError, ReasoningError, ValueError) as exc:
        raise StageError("reason", iid, exc) from exc
    try:
        rerank = rerank_candidates(triplet, reasoning, y_k, backends.reranker, template=verification_template)
    except RerankError as exc:
        raise StageError("rerank", iid, exc) from exc

    fused = fuse(rerank, y_k, config)
    return Prediction(
        instance_id=iid,
        fused=_append_rest(fused, retrieval_full),
        retrieval=retrieval_full,
        rerank=_append_rest(rerank, retrieval_full),
        reasoning=reasoning,
    )


@dataclass
class PredictionRun:
    predictions: list[Prediction] = field(default_factory=list)
    failures: list[StageError] = field(default_factory=list)


def run_predictions(
    triplets: Sequence[QueryTriplet],
    index: EmbeddedDataset,
    backends: PipelineBackends,
    k: int = DEFAULT_K,
    config: FusionConfig = FusionConfig(),
    *,
    workers: int = 1,
    exclude_self: bool = False,
) -> PredictionRun:
    """Predict every instance; results and failures keep input order."""
    reasoner_t = load_template("reasoner")
    verify_t = load_template("verification")

    def work(t: QueryTriplet) -> Prediction | StageError:
        try:
            return predict(
                t,
                index,
                backends,
                k,
                config,
                exclude_instance_id=t.instance_id if exclude_self else None,
                reasoner_template=reasoner_t,
                verification_template=verify_t,
            )
        except StageError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, triplets))
    else:
        outcomes = [work(t) for t in triplets]
    run = PredictionRun()
    for item in outcomes:
        (run.failures if isinstance(item, StageError) else run.predictions).append(item)
    return run


def write_predictions(predictions: Iterable[Prediction], fh: IO[str]) -> None:
    for p in predictions:
        fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def write_failures(failures: Iterable[StageError], fh: IO[str]) -> None:
    for f in failures:
        fh.write(json.dumps({"instance_id": f.instance_id, "stage": f.stage, "error": str(f.cause)}, ensure_ascii=False) + "\n")


def read_predictions(fh: IO[str]) -> dict[str, dict[str, list[CompositeLabel]]]:
    """Stage -> instance_id -> ranked labels. Stage rows appear only when every line carries them."""
    stages: dict[str, dict[str, list[CompositeLabel]]] = {"fused": {}}
    per_stage: dict[str, dict[str, list[CompositeLabel]]] = {}
    lines = 0
    for line in fh:
        if not line.strip():
            continue
        lines += 1
        obj = json.loads(line)
        iid = str(obj["instance_id"])
        if iid in stages["fused"]:
            raise ValueError(f"duplicate prediction for instance {iid}")
        stages["fused"][iid] = [parse_label(s) for s in obj["ranked"]]
        for name, body in (obj.get("stages") or {}).items():
            per_stage.setdefault(name, {})[iid] = [parse_label(s) for s in body["ranked"]]
    for name, table in per_stage.items():
        if len(table) == lines:
            stages[name] = table
    return stages
