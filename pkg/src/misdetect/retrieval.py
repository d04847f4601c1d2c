"""Embedded dataset, label-level max-similarity scoring and top-k selection."""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backends.base import BackendError, DimensionMismatchError, EmbeddingBackend
from .labels import CompositeLabel, DatasetRecord, QueryTriplet, parse_label
from .ranking import ScoredRanking

DEFAULT_K = 10
_MAGIC = b"MDIX"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class IndexBuildError(RuntimeError):
    pass


def embedding_text(triplet: QueryTriplet) -> str:
    return f"Question: {triplet.question_text}\nAnswer: {triplet.chosen_answer}\nExplanation: {triplet.explanation}"


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding has non-finite entries")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero embedding")
    return vec / norm


@dataclass(frozen=True)
class EmbeddedDataset:
    """Immutable (embedding, label, instance id) table, one row per record."""

    vectors: np.ndarray
    labels: tuple[CompositeLabel, ...]
    instance_ids: tuple[str, ...]
    embedder_id: str = "unknown"

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValueError("index needs a non-empty (count, dimension) matrix")
        if not (len(self.labels) == len(self.instance_ids) == self.vectors.shape[0]):
            raise ValueError("vectors, labels and instance_ids must have the same length")
        vectors = np.array(self.vectors, dtype=np.float64, order="C")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def label_set(self) -> list[CompositeLabel]:
        return sorted(set(self.labels))

    def save(self, path: Path | str) -> Path:
        """Write ``<path>`` (binary) and ``<path>.manifest.json``; returns the manifest path."""
        path = Path(path)
        table = json.dumps(
            [[iid, lab.canonical] for iid, lab in zip(self.instance_ids, self.labels)],
            ensure_ascii=False,
        ).encode("utf-8")
        blob = b"".join(
            [
                _HEADER.pack(_MAGIC, _VERSION, self.dimension, len(self)),
                self.vectors.astype("<f8").tobytes(order="C"),
                struct.pack("<Q", len(table)),
                table,
            ]
        )
        path.write_bytes(blob)
        manifest = {
            "format": "misdetect-index",
            "version": _VERSION,
            "dimension": self.dimension,
            "count": len(self),
            "embedder": self.embedder_id,
            "normalized": True,
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        mpath = path.with_name(path.name + ".manifest.json")
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return mpath

    @classmethod
    def load(cls, path: Path | str) -> EmbeddedDataset:
        path = Path(path)
        blob = path.read_bytes()
        magic, version, dim, count = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError(f"{path} is not a version-{_VERSION} index file")
        off = _HEADER.size
        nbytes = dim * count * 8
        vectors = np.frombuffer(blob, dtype="<f8", count=dim * count, offset=off).reshape(count, dim)
        off += nbytes
        (tlen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        table = json.loads(blob[off : off + tlen].decode("utf-8"))
        embedder = "unknown"
        mpath = path.with_name(path.name + ".manifest.json")
        if mpath.is_file():
            embedder = json.loads(mpath.read_text(encoding="utf-8")).get("embedder", embedder)
        return cls(
            vectors=vectors.astype(np.float64),
            labels=tuple(parse_label(lab) for _, lab in table),
            instance_ids=tuple(iid for iid, _ in table),
            embedder_id=embedder,
        )


def build_index(
    records: Sequence[DatasetRecord],
    embedder: EmbeddingBackend,
    *,
    workers: int = 1,
) -> EmbeddedDataset:
    """Embed every record (one request per record) and L2-normalize the vectors.

    Requests may run concurrently; rows are assembled in input order.
    """
    if not records:
        raise IndexBuildError("cannot build an index from an empty record list")

    def one(rec: DatasetRecord) -> np.ndarray:
        try:
            (vec,) = embedder.embed([embedding_text(rec.triplet)])
        except BackendError as exc:
            raise IndexBuildError(f"embedding failed for instance {rec.instance_id}: {exc}") from exc
        return np.asarray(vec, dtype=np.float64)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(one, records))
    else:
        raw = [one(r) for r in records]

    dim = raw[0].shape
    rows = []
    for pos, (rec, vec) in enumerate(zip(records, raw), start=1):
        if vec.shape != dim:
            raise DimensionMismatchError(
                f"record {pos} (instance {rec.instance_id}) has embedding shape {vec.shape}, expected {dim}"
            )
        try:
            rows.append(l2_normalize(vec))
        except ValueError as exc:
            raise IndexBuildError(f"record {pos} (instance {rec.instance_id}): {exc}") from None
    return EmbeddedDataset(
        vectors=np.vstack(rows),
        labels=tuple(r.label for r in records),
        instance_ids=tuple(r.instance_id for r in records),
        embedder_id=getattr(embedder, "model_id", "unknown"),
    )


def embed_query(triplet: QueryTriplet, embedder: EmbeddingBackend) -> np.ndarray:
    (vec,) = embedder.embed([embedding_text(triplet)])
    return l2_normalize(vec)


def similarities(query: np.ndarray, index: EmbeddedDataset) -> np.ndarray:
    """Dot product of ``query`` with every index row.

    Each row's sum is a left-to-right fold over the coordinates, vectorized
    across rows, so the result is bit-identical to a scalar loop
    ``s = 0.0; for t: s += z[t] * q[t]``.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise DimensionMismatchError(f"query has shape {query.shape}, index dimension is {index.dimension}")
    acc = np.zeros(len(index), dtype=np.float64)
    vecs = index.vectors
    for t in range(index.dimension):
        acc += vecs[:, t] * query[t]
    return acc


def score_labels(
    query: np.ndarray,
    index: EmbeddedDataset,
    *,
    exclude_instance_id: str | None = None,
) -> dict[CompositeLabel, float]:
    """Per-label maximum similarity over the index entries carrying that label.

    With ``exclude_instance_id`` the matching entry is skipped; a label whose
    only entries are excluded is then absent from the table.
    """
    sims = similarities(query, index)
    table: dict[CompositeLabel, float] = {}
    for s, lab, iid in zip(sims.tolist(), index.labels, index.instance_ids):
        if exclude_instance_id is not None and iid == exclude_instance_id:
            continue
        prev = table.get(lab)
        if prev is None or s > prev:
            table[lab] = s
    return table


def top_k_labels(table: Mapping[CompositeLabel, float], k: int = DEFAULT_K) -> ScoredRanking:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    full = ScoredRanking.from_scores(table)
    return ScoredRanking(full.items[:k])
