"""Ordered (label, score) lists shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .labels import CompositeLabel


def ranking_key(item: tuple[CompositeLabel, float]) -> tuple[float, str]:
    label, score = item
    return (-score, label.canonical)


@dataclass(frozen=True)
class ScoredRanking:
    """Ordered labels with their scores.

    Use :meth:`from_scores` to get the standard order (score descending,
    canonical label ascending). The raw constructor keeps the given order,
    which :func:`misdetect.pipeline.predict` relies on when it appends the
    labels outside the fused block.
    """

    items: tuple[tuple[CompositeLabel, float], ...]

    def __post_init__(self) -> None:
        labels = [lab for lab, _ in self.items]
        if len(set(labels)) != len(labels):
            raise ValueError("ranking contains duplicate labels")
        for lab, score in self.items:
            if not math.isfinite(score):
                raise ValueError(f"non-finite score {score!r} for {lab.canonical}")

    @classmethod
    def from_scores(cls, scores: Mapping[CompositeLabel, float] | Iterable[tuple[CompositeLabel, float]]) -> ScoredRanking:
        pairs = scores.items() if isinstance(scores, Mapping) else scores
        return cls(tuple(sorted(((lab, float(s)) for lab, s in pairs), key=ranking_key)))

    @property
    def labels(self) -> list[CompositeLabel]:
        return [lab for lab, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def as_dict(self) -> dict[CompositeLabel, float]:
        return dict(self.items)

    def is_standard_order(self) -> bool:
        return list(self.items) == sorted(self.items, key=ranking_key)

    def rank_of(self, label: CompositeLabel) -> int | None:
        """1-based rank of ``label``, or None when absent."""
        for pos, (lab, _) in enumerate(self.items, start=1):
            if lab == label:
                return pos
        return None

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[tuple[CompositeLabel, float]]:
        return iter(self.items)

    def to_json(self) -> dict:
        return {"ranked": [lab.canonical for lab in self.labels], "scores": self.scores}
