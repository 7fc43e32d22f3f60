"""Embedding-keyed experience store.

Workflows and pipelines are stored under text keys; retrieval embeds the
query and returns the best record by cosine similarity when it clears a
per-kind threshold. The store is a plain linear scan over a JSON-persistable
record list: sizes are tens to hundreds of records, so no index is needed.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from .errors import (
    DimensionMismatch,
    EmbeddingBackendError,
    PayloadKindMismatch,
    UnknownRecord,
)

__all__ = [
    "RecordKind",
    "Embedding",
    "LocalDeterministicEmbedder",
    "ExternalApiEmbedder",
    "EmbedderProvider",
    "EmbedderSpec",
    "MemoryRecord",
    "MemoryStats",
    "ExperienceMemory",
    "workflow_key",
    "pipeline_key",
    "DEFAULT_RETRIEVAL_THRESHOLD",
]

DEFAULT_RETRIEVAL_THRESHOLD = 0.85
DEFAULT_DIMENSION = 256

_UNIT_TOLERANCE = 1e-9


class RecordKind(str, Enum):
    WORKFLOW = "workflow"
    PIPELINE = "pipeline"


class Embedding:
    """A unit-length vector, or the all-zero vector for empty text."""

    __slots__ = ("values",)

    def __init__(self, values: Any) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embeddings are one-dimensional")
        norm = float(np.linalg.norm(arr))
        if norm != 0.0 and abs(norm - 1.0) > _UNIT_TOLERANCE:
            raise ValueError(f"embedding norm must be 1 or 0, got {norm}")
        arr = arr.copy()
        arr.setflags(write=False)
        self.values = arr

    @classmethod
    def from_raw(cls, raw: Any) -> "Embedding":
        arr = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            return cls(np.zeros_like(arr))
        return cls(arr / norm)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_zero(self) -> bool:
        return not self.values.any()

    def cosine(self, other: "Embedding") -> float:
        """Dot product of unit vectors; 0 whenever either side is zero."""
        return float(self.values @ other.values)


class LocalDeterministicEmbedder:
    """Hash each whitespace token into a bucket, count, then L2-normalize.

    Fully offline and stable across processes (sha256, not the salted builtin
    hash), so snapshots and retrieval results are reproducible.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def embed(self, text: str) -> Embedding:
        counts = np.zeros(self.dimension, dtype=np.float64)
        for token in text.split():
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            counts[int.from_bytes(digest[:8], "big") % self.dimension] += 1.0
        return Embedding.from_raw(counts)


class ExternalApiEmbedder:
    """Proxy an embeddings endpoint (OpenAI-style body) and normalize."""

    def __init__(
        self,
        endpoint: str,
        model: str = "",
        api_key: str = "",
        dimension: int = DEFAULT_DIMENSION,
        timeout: float = 30.0,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.dimension = dimension
        self.timeout = timeout

    def embed(self, text: str) -> Embedding:
        import urllib.error
        import urllib.request

        body = json.dumps({"model": self.model, "input": text}).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        request = urllib.request.Request(
            self.endpoint, data=body, headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            raw = payload["data"][0]["embedding"]
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise EmbeddingBackendError(f"embedding call failed: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise EmbeddingBackendError(f"malformed embedding reply: {exc}") from exc
        embedding = Embedding.from_raw(raw)
        if embedding.dimension != self.dimension:
            raise DimensionMismatch(
                f"provider returned dimension {embedding.dimension}, expected {self.dimension}"
            )
        return embedding


class EmbedderProvider(str, Enum):
    LOCAL_DETERMINISTIC = "local_deterministic"
    EXTERNAL_API = "external_api"


@dataclass(frozen=True)
class EmbedderSpec:
    provider: EmbedderProvider = EmbedderProvider.LOCAL_DETERMINISTIC
    dimension: int = DEFAULT_DIMENSION
    endpoint: str = ""
    model: str = ""
    api_key: str = ""

    def build(self) -> LocalDeterministicEmbedder | ExternalApiEmbedder:
        if self.provider is EmbedderProvider.LOCAL_DETERMINISTIC:
            return LocalDeterministicEmbedder(self.dimension)
        return ExternalApiEmbedder(
            self.endpoint, self.model, self.api_key, self.dimension
        )


@dataclass(frozen=True)
class MemoryRecord:
    record_id: int
    kind: RecordKind
    key_text: str
    embedding: Embedding
    payload: dict[str, Any]


@dataclass
class MemoryStats:
    """Read/write tallies; the baseline-purity checks assert these stay zero."""

    reads: int = 0
    writes: int = 0


def workflow_key(description: str) -> str:
    """Workflows are keyed by the goal description alone."""
    return description


def pipeline_key(description: str, milestones: list[str] | tuple[str, ...]) -> str:
    """Pipelines are keyed by the subgoal description plus its milestones."""
    return description + "\n" + "; ".join(milestones)


def _check_payload(kind: RecordKind, payload: dict[str, Any]) -> None:
    if not isinstance(payload, dict):
        raise PayloadKindMismatch("payloads are JSON objects")
    if kind is RecordKind.PIPELINE and not ("nodes" in payload and "edges" in payload):
        raise PayloadKindMismatch("a pipeline payload carries nodes and edges")
    if kind is RecordKind.WORKFLOW and "entries" not in payload:
        raise PayloadKindMismatch("a workflow payload carries entries")


class ExperienceMemory:
    """Concurrent-read, serialized-write record store with cosine retrieval."""

    def __init__(
        self,
        embedder: LocalDeterministicEmbedder | ExternalApiEmbedder | None = None,
        thresholds: dict[RecordKind, float] | None = None,
    ) -> None:
        self._embedder = embedder or LocalDeterministicEmbedder()
        self._records: list[MemoryRecord] = []
        self._lock = threading.Lock()
        self._thresholds = {kind: DEFAULT_RETRIEVAL_THRESHOLD for kind in RecordKind}
        self._thresholds.update(thresholds or {})
        self.stats = MemoryStats()

    @property
    def dimension(self) -> int:
        return self._embedder.dimension

    def threshold(self, kind: RecordKind) -> float:
        return self._thresholds[kind]

    def embed(self, text: str) -> Embedding:
        return self._embedder.embed(text)

    def store(self, kind: RecordKind, key_text: str, payload: dict[str, Any]) -> int:
        _check_payload(kind, payload)
        embedding = self.embed(key_text)
        if embedding.dimension != self.dimension:
            raise DimensionMismatch(
                f"embedding dimension {embedding.dimension} != store dimension {self.dimension}"
            )
        with self._lock:
            record = MemoryRecord(
                record_id=len(self._records) + 1,
                kind=kind,
                key_text=key_text,
                embedding=embedding,
                payload=payload,
            )
            self._records.append(record)
            self.stats.writes += 1
        return record.record_id

    def retrieve(
        self, kind: RecordKind, query_text: str, threshold: float | None = None
    ) -> tuple[MemoryRecord, float] | None:
        """Best record of ``kind`` by cosine similarity, if it clears the threshold.

        Ties keep the earliest-stored record, so results do not depend on
        insertion order beyond first-come precedence.
        """
        if threshold is None:
            threshold = self._thresholds[kind]
        with self._lock:
            records = list(self._records)
            self.stats.reads += 1
        query = self.embed(query_text)
        best: tuple[MemoryRecord, float] | None = None
        for record in records:
            if record.kind is not kind:
                continue
            similarity = query.cosine(record.embedding)
            if best is None or similarity > best[1]:
                best = (record, similarity)
        if best is not None and best[1] >= threshold:
            return best
        return None

    def get(self, record_id: int) -> MemoryRecord:
        with self._lock:
            for record in self._records:
                if record.record_id == record_id:
                    return record
        raise UnknownRecord(f"no record with id {record_id}")

    def records(self, kind: RecordKind | None = None) -> list[MemoryRecord]:
        with self._lock:
            records = list(self._records)
        if kind is None:
            return records
        return [r for r in records if r.kind is kind]

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension,
            "records": [
                {
                    "id": r.record_id,
                    "kind": r.kind.value,
                    "key_text": r.key_text,
                    "embedding": r.embedding.values.tolist(),
                    "payload": r.payload,
                }
                for r in self.records()
            ],
        }

    def save(self, path: str) -> None:
        # to_dict snapshots the record list under the lock itself
        text = json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    @classmethod
    def load(
        cls,
        path: str,
        embedder: LocalDeterministicEmbedder | ExternalApiEmbedder | None = None,
        thresholds: dict[RecordKind, float] | None = None,
    ) -> "ExperienceMemory":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        store = cls(embedder=embedder, thresholds=thresholds)
        if doc["dimension"] != store.dimension:
            raise DimensionMismatch(
                f"snapshot dimension {doc['dimension']} != embedder dimension {store.dimension}"
            )
        for raw in doc.get("records", []):
            record = MemoryRecord(
                record_id=int(raw["id"]),
                kind=RecordKind(raw["kind"]),
                key_text=raw["key_text"],
                embedding=Embedding(raw["embedding"]),
                payload=raw["payload"],
            )
            store._records.append(record)
        return store
