"""
One dense embedding per chunk and exact top-k nearest neighbor queries by
cosine similarity.

Persistence format (JSON lines)::

    {"format": "legalqa-vector-store", "version": 1, "dimension": 256,
     "provider_name": "mock", "count": 2}
    {"chunk_id": "ipc#0", "vector": [0.1, ...]}
    {"chunk_id": "ipc#1", "vector": [0.0, ...]}
"""

import json
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.embedding_providers import EmbeddingProvider, Vector
from legalqa.exceptions import (
    LegalqaDataException,
    LegalqaPreconditionException,
)
from legalqa.log import logger
from legalqa.object_types import Chunk, ScoredChunk

STORE_FORMAT = "legalqa-vector-store"

STORE_VERSION = 1


@dataclass(config={"extra": "forbid"})
class StoreHeader:
    format: str

    version: int

    dimension: int

    provider_name: str

    count: int


@dataclass(config={"extra": "forbid"})
class StoredRecord:
    chunk_id: str

    vector: list[float]


class EmbeddingRecord:
    chunk_id: str

    vector: Vector

    norm: float
    """The cached euclidean norm, always positive."""

    def __init__(self, chunk_id: str, vector: Vector, norm: float) -> None:
        self.chunk_id = chunk_id
        self.vector = vector
        self.norm = norm


def _as_vector(vector: Union[Vector, Sequence[float]], dimension: int) -> tuple[Vector, float]:
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (dimension,):
        raise LegalqaPreconditionException(
            f"Dimension mismatch: expected {dimension}, got {v.shape[-1] if v.ndim else 0}"
        )
    norm = float(np.linalg.norm(v))
    if not norm > 0:
        raise LegalqaPreconditionException("Zero vectors have no cosine similarity!")
    return v, norm


class VectorStore:
    """
    An exact cosine similarity store. Single writer while it is built,
    afterwards only read.
    """

    dimension: int

    provider_name: str
    """The embedder that created the vectors. Queries must use the same one."""

    records: dict[str, EmbeddingRecord]

    def __init__(self, dimension: int, provider_name: str) -> None:
        if dimension <= 0:
            raise LegalqaPreconditionException("The dimension must be positive!")
        self.dimension = dimension
        self.provider_name = provider_name
        self.records = {}
        self.__matrix: Optional[Vector] = None
        self.__norms: Optional[Vector] = None
        self.__ids: list[str] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, chunk_id: str, vector: Union[Vector, Sequence[float]]) -> "VectorStore":
        """
        :param chunk_id: A chunk id not yet in the store.
        :param vector: A non-zero vector of the store dimension.
        """
        if chunk_id in self.records:
            raise LegalqaPreconditionException(f"Duplicate chunk id: {chunk_id}")
        v, norm = _as_vector(vector, self.dimension)
        self.records[chunk_id] = EmbeddingRecord(chunk_id, v, norm)
        self.__matrix = None
        return self

    def __ensure_matrix(self) -> tuple[Vector, Vector, list[str]]:
        if self.__matrix is None or self.__norms is None:
            self.__ids = list(self.records)
            if self.__ids:
                self.__matrix = np.vstack([self.records[i].vector for i in self.__ids])
            else:
                self.__matrix = np.zeros((0, self.dimension))
            self.__norms = np.array(
                [self.records[i].norm for i in self.__ids], dtype=np.float64
            )
        return self.__matrix, self.__norms, self.__ids

    def check_provider(self, provider_name: str) -> None:
        if provider_name != self.provider_name:
            raise LegalqaDataException(
                f"The vector store was built with {self.provider_name!r}, "
                f"queries must use the same embedder, not {provider_name!r}"
            )

    def knn_query(
        self, query_vector: Union[Vector, Sequence[float]], k: int = 4
    ) -> list[ScoredChunk]:
        """
        The ``k`` most similar records, similarity descending, ties by
        ascending chunk id.
        """
        if k < 1:
            raise LegalqaPreconditionException("k must be at least 1!")
        q, q_norm = _as_vector(query_vector, self.dimension)
        matrix, norms, ids = self.__ensure_matrix()
        if not ids:
            return []
        similarities = np.clip(matrix @ q / (norms * q_norm), -1.0, 1.0)
        ranked = sorted(
            zip(ids, similarities.tolist()), key=lambda item: (-item[1], item[0])
        )
        return [ScoredChunk(chunk_id=cid, score=sim) for cid, sim in ranked[:k]]

    def persist(self, path: Union[str, Path]) -> None:
        header = StoreHeader(
            format=STORE_FORMAT,
            version=STORE_VERSION,
            dimension=self.dimension,
            provider_name=self.provider_name,
            count=len(self.records),
        )
        with open(path, "wb") as file:
            file.write(TypeAdapter(StoreHeader).dump_json(header) + b"\n")
            for record in self.records.values():
                line = {"chunk_id": record.chunk_id, "vector": record.vector.tolist()}
                file.write(json.dumps(line).encode("utf-8") + b"\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "VectorStore":
        try:
            with open(path, "r", encoding="utf-8") as file:
                lines = [line for line in file if line.strip()]
        except OSError as e:
            raise LegalqaDataException(f"Unable to read the vector store {path}: {e}")
        if not lines:
            raise LegalqaDataException(f"{path} is empty, the header is missing.")
        try:
            header = TypeAdapter(StoreHeader).validate_json(lines[0])
        except ValidationError as e:
            raise LegalqaDataException(f"Corrupt vector store header: {e}", line_number=1)
        if header.format != STORE_FORMAT:
            raise LegalqaDataException(f"{path} is not a vector store file.")
        if header.version != STORE_VERSION:
            raise LegalqaDataException(
                f"Unsupported vector store version {header.version} in {path}"
            )
        if header.count != len(lines) - 1:
            raise LegalqaDataException(
                f"The header announces {header.count} records, found {len(lines) - 1}"
            )
        store = cls(header.dimension, header.provider_name)
        adapter = TypeAdapter(StoredRecord)
        for line_number, line in enumerate(lines[1:], start=2):
            try:
                record = adapter.validate_json(line)
                store.add(record.chunk_id, record.vector)
            except (ValidationError, LegalqaPreconditionException) as e:
                raise LegalqaDataException(
                    f"Corrupt vector store record: {e}", line_number=line_number
                )
        return store

    @classmethod
    def build(cls, chunks: Sequence[Chunk], provider: EmbeddingProvider) -> "VectorStore":
        """Embed the chunks batch-wise with the provider and store the vectors."""
        store = cls(provider.dimension, provider.name)
        batch_size = provider.spec.batch_size
        for start in range(0, len(chunks), batch_size):
            batch = chunks[start : start + batch_size]
            result = provider.embed_batch([chunk.text for chunk in batch])
            for chunk, vector in zip(batch, result.vectors):
                store.add(chunk.chunk_id, vector)
        logger.info("Embedded %s chunks with %s", len(store), provider.name)
        return store
