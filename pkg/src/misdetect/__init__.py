"""Misconception detection by retrieval, chain-of-thought reasoning and verification reranking."""

from .fusion import FusionConfig, evaluate, fuse, map_at_m, softmax_normalize
from .labels import (
    NA,
    CompositeLabel,
    DatasetRecord,
    LabelSpace,
    QueryTriplet,
    ReasoningType,
    build_label_space,
    ingest_dataset,
    parse_label,
)
from .pipeline import PipelineBackends, predict, run_predictions
from .ranking import ScoredRanking
from .retrieval import EmbeddedDataset, build_index, score_labels, top_k_labels

__version__ = "0.1.0"
