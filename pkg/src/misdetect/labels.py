"""Instance and label data model, CSV ingestion and the label space."""

from __future__ import annotations

import csv
import enum
import io
import json
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

NA = "NA"


class LabelError(ValueError):
    """Raised when a label string or label tuple is invalid."""


class IngestError(ValueError):
    """Raised for file-level ingestion failures (e.g. a missing column)."""


class ReasoningType(str, enum.Enum):
    CORRECT = "Correct"
    MISCONCEPTION = "Misconception"
    NEITHER = "Neither"


_LABEL_RE = re.compile(r"^(?P<correctness>[^_:]+)_(?P<reasoning_type>[^_:]+):(?P<misconception>.*)$", re.S)


def _parse_bool(text: str) -> bool:
    if text == "True":
        return True
    if text == "False":
        return False
    raise LabelError(f"correctness must be 'True' or 'False', got {text!r}")


def _parse_reasoning_type(text: str) -> ReasoningType:
    try:
        return ReasoningType(text)
    except ValueError:
        allowed = ", ".join(t.value for t in ReasoningType)
        raise LabelError(f"reasoning_type must be one of {{{allowed}}}, got {text!r}") from None


@dataclass(frozen=True)
class CompositeLabel:
    """Three-level label: answer correctness, reasoning type, misconception.

    ``misconception`` is the literal ``"NA"`` unless the reasoning type is
    ``Misconception``. Construction validates the hierarchy, so every
    instance in circulation is well formed.
    """

    correctness: bool
    reasoning_type: ReasoningType
    misconception: str = NA

    def __post_init__(self) -> None:
        if not isinstance(self.correctness, bool):
            raise LabelError(f"correctness must be a bool, got {self.correctness!r}")
        if not isinstance(self.reasoning_type, ReasoningType):
            object.__setattr__(self, "reasoning_type", _parse_reasoning_type(str(self.reasoning_type)))
        misconception = self.misconception.strip()
        object.__setattr__(self, "misconception", misconception)
        if self.reasoning_type is ReasoningType.MISCONCEPTION:
            if not misconception or misconception == NA:
                raise LabelError(
                    "hierarchy violation: reasoning_type Misconception requires a non-empty "
                    "misconception other than NA"
                )
        elif misconception != NA:
            raise LabelError(
                f"hierarchy violation: reasoning_type {self.reasoning_type.value} requires "
                f"misconception NA, got {misconception!r}"
            )

    @property
    def category(self) -> str:
        return f"{self.correctness}_{self.reasoning_type.value}"

    @property
    def canonical(self) -> str:
        return f"{self.category}:{self.misconception}"

    def __str__(self) -> str:
        return self.canonical

    def __lt__(self, other: CompositeLabel) -> bool:
        if not isinstance(other, CompositeLabel):
            return NotImplemented
        return self.canonical < other.canonical


def parse_label(text: str) -> CompositeLabel:
    """Parse ``<correctness>_<reasoning_type>:<misconception>``.

    >>> parse_label("False_Misconception:Incomplete").misconception
    'Incomplete'
    """
    match = _LABEL_RE.match(text.strip())
    if match is None:
        raise LabelError(f"malformed label {text!r}: expected '<correctness>_<reasoning_type>:<misconception>'")
    return CompositeLabel(
        correctness=_parse_bool(match["correctness"]),
        reasoning_type=_parse_reasoning_type(match["reasoning_type"]),
        misconception=match["misconception"],
    )


def label_from_category(category: str, misconception: str | None) -> CompositeLabel:
    """Build a label from a ``<correctness>_<reasoning_type>`` category cell.

    An empty misconception cell is read as NA.
    """
    correctness, sep, reasoning_type = category.strip().partition("_")
    if not sep:
        raise LabelError(f"malformed category {category!r}: expected '<correctness>_<reasoning_type>'")
    misconception = (misconception or "").strip() or NA
    return CompositeLabel(_parse_bool(correctness), _parse_reasoning_type(reasoning_type), misconception)


@dataclass(frozen=True)
class QueryTriplet:
    question_text: str
    chosen_answer: str
    explanation: str
    instance_id: str

    def __post_init__(self) -> None:
        if not self.question_text.strip():
            raise ValueError(f"instance {self.instance_id}: question_text is empty")
        if not self.chosen_answer.strip():
            raise ValueError(f"instance {self.instance_id}: chosen_answer is empty")


@dataclass(frozen=True)
class DatasetRecord:
    triplet: QueryTriplet
    label: CompositeLabel

    @property
    def instance_id(self) -> str:
        return self.triplet.instance_id

    def to_json(self) -> dict:
        t = self.triplet
        return {
            "instance_id": t.instance_id,
            "question": t.question_text,
            "answer": t.chosen_answer,
            "explanation": t.explanation,
            "label": self.label.canonical,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> DatasetRecord:
        triplet = QueryTriplet(obj["question"], obj["answer"], obj.get("explanation", ""), str(obj["instance_id"]))
        return cls(triplet, parse_label(obj["label"]))


@dataclass(frozen=True)
class LabelSpace:
    """Sorted, deduplicated collection of composite labels."""

    labels: tuple[CompositeLabel, ...]

    def __post_init__(self) -> None:
        canon = [lab.canonical for lab in self.labels]
        if canon != sorted(set(canon)):
            raise ValueError("label space must be deduplicated and sorted by canonical form")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    @classmethod
    def from_labels(cls, labels: Iterable[CompositeLabel]) -> LabelSpace:
        return cls(tuple(sorted(set(labels))))


def build_label_space(records: Sequence[DatasetRecord]) -> LabelSpace:
    if not records:
        raise ValueError("cannot build a label space from an empty record list")
    return LabelSpace.from_labels(r.label for r in records)


# Column names of the public MAP student-misconception competition files.
DEFAULT_COLUMN_MAP: dict[str, str] = {
    "instance_id": "row_id",
    "question_text": "QuestionText",
    "chosen_answer": "MC_Answer",
    "explanation": "StudentExplanation",
    "category": "Category",
    "misconception": "Misconception",
}

_REQUIRED_FIELDS = ("instance_id", "question_text", "chosen_answer", "category")


@dataclass(frozen=True)
class Rejection:
    row_index: int
    reason: str

    def to_json(self) -> dict:
        return {"row_index": self.row_index, "reason": self.reason}


@dataclass
class IngestResult:
    records: list[DatasetRecord] = field(default_factory=list)
    rejections: list[Rejection] = field(default_factory=list)

    @property
    def row_count(self) -> int:
        return len(self.records) + len(self.rejections)


def ingest_dataset(
    source: IO[str],
    column_map: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> IngestResult:
    """Read a delimited file with a header row into dataset records.

    Bad rows never abort ingestion; each is reported as a :class:`Rejection`
    with its zero-based data-row index. Missing columns are a file-level
    error and raise :class:`IngestError`.
    """
    cmap = {**DEFAULT_COLUMN_MAP, **(column_map or {})}
    reader = csv.DictReader(source, delimiter=delimiter)
    header = reader.fieldnames or []
    needed = [cmap[f] for f in (*_REQUIRED_FIELDS, "explanation", "misconception")]
    missing = [col for col in needed if col not in header]
    if missing:
        raise IngestError(f"missing column(s): {', '.join(missing)}")

    result = IngestResult()
    seen: set[str] = set()
    for row_index, row in enumerate(reader):
        try:
            record = _row_to_record(row, cmap)
        except ValueError as exc:
            result.rejections.append(Rejection(row_index, str(exc)))
            continue
        if record.instance_id in seen:
            result.rejections.append(Rejection(row_index, f"duplicate instance_id {record.instance_id!r}"))
            continue
        seen.add(record.instance_id)
        result.records.append(record)
    return result


def _row_to_record(row: Mapping[str, str | None], cmap: Mapping[str, str]) -> DatasetRecord:
    values = {name: (row.get(col) or "") for name, col in cmap.items()}
    for name in _REQUIRED_FIELDS:
        if not values[name].strip():
            raise ValueError(f"empty required field {name!r} (column {cmap[name]!r})")
    try:
        label = label_from_category(values["category"], values["misconception"])
    except LabelError as exc:
        raise ValueError(f"label parse failure: {exc}") from None
    triplet = QueryTriplet(
        question_text=values["question_text"],
        chosen_answer=values["chosen_answer"],
        explanation=values["explanation"],
        instance_id=values["instance_id"].strip(),
    )
    return DatasetRecord(triplet, label)


def write_rejections(rejections: Iterable[Rejection], fh: IO[str]) -> None:
    for rej in rejections:
        fh.write(json.dumps(rej.to_json(), ensure_ascii=False) + "\n")


def write_records(records: Iterable[DatasetRecord], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_records(fh: IO[str]) -> list[DatasetRecord]:
    return [DatasetRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def read_triplets(fh: IO[str]) -> list[QueryTriplet]:
    """Read prediction inputs; a ``label`` field, if present, is ignored."""
    out = []
    for line in fh:
        if line.strip():
            obj = json.loads(line)
            out.append(QueryTriplet(obj["question"], obj["answer"], obj.get("explanation", ""), str(obj["instance_id"])))
    return out


def ingest_text(text: str, column_map: Mapping[str, str] | None = None, delimiter: str = ",") -> IngestResult:
    return ingest_dataset(io.StringIO(text), column_map, delimiter)
