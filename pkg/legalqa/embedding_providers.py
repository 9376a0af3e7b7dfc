"""
A uniform embedding interface with a remote provider speaking a minimal
JSON-over-HTTP contract and a deterministic offline mock.

Remote request::

    POST {"model": "...", "input": ["text", ...]}

Remote response::

    {"data": [{"index": 0, "embedding": [0.1, ...]}, ...],
     "usage": {"total_tokens": 12}}
"""

import hashlib
import threading
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import numpy.typing as npt

from legalqa.bm25_index import tokenize
from legalqa.config import Config, EmbeddingProviderSpec
from legalqa.corpus_ingest import clean_text
from legalqa.exceptions import (
    LegalqaPreconditionException,
    LegalqaRequestException,
)
from legalqa.log import logger
from legalqa.request_handler import RequestHandler

Vector = npt.NDArray[np.float64]


@dataclass
class EmbeddingBatchResult:
    vectors: list[Vector]
    """One vector per input, in input order."""

    token_usage: Optional[int] = None

    attempts: int = 1
    """Number of HTTP attempts, summed over all sub batches."""


def cosine_similarity(a: Union[Vector, Sequence[float]], b: Union[Vector, Sequence[float]]) -> float:
    u = np.asarray(a, dtype=np.float64)
    v = np.asarray(b, dtype=np.float64)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def _bucket(feature: str, d: int, seed: int) -> int:
    digest = hashlib.blake2b(f"{seed}\x00{feature}".encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big") % d


def mock_features(text: str) -> list[str]:
    """Every token and every character bigram of every token."""
    features: list[str] = []
    for token in tokenize(text):
        features.append(f"t:{token}")
        for i in range(len(token) - 1):
            features.append(f"b:{token[i : i + 2]}")
    return features


def mock_embed(text: str, d: int = 256, seed: int = 0) -> Vector:
    """
    A hashed bag-of-features embedding: each feature adds ``1`` to one of
    ``d`` buckets, the result is L2-normalized.

    Texts without any token fall back to a single feature made of the
    cleaned text so that every vector has unit norm.

    :param text: The text to embed.
    :param d: The dimension, at least ``8``.
    :param seed: The seed of the feature hash.
    """
    if d < 8:
        raise LegalqaPreconditionException("The mock dimension must be at least 8!")
    features = mock_features(text)
    if not features:
        features = [f"r:{clean_text(text)}"]
    vector = np.zeros(d, dtype=np.float64)
    for feature in features:
        vector[_bucket(feature, d, seed)] += 1.0
    return vector / np.linalg.norm(vector)


class EmbeddingCache:
    """
    An on-disk cache, one ``.npy`` file per (provider, sha256 of the text).
    """

    directory: Path

    def __init__(self, directory: Union[str, Path]) -> None:
        self.directory = Path(directory)

    def __path(self, provider: str, text: str) -> Path:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.directory / provider / f"{key}.npy"

    def get(self, provider: str, text: str) -> Optional[Vector]:
        path = self.__path(provider, text)
        if not path.exists():
            return None
        return np.load(path)

    def put(self, provider: str, text: str, vector: Vector) -> None:
        path = self.__path(provider, text)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, vector)


class EmbeddingProvider(ABC):
    """
    The base class of all embedding providers. Subclasses implement
    :meth:`_embed`, the base class validates inputs and outputs, prepends
    the instruction and splits the input into batches.
    """

    spec: EmbeddingProviderSpec

    cache: Optional[EmbeddingCache]

    calls: int
    """Number of calls of :meth:`_embed`, handy to assert that nothing was
    sent to a provider."""

    def __init__(
        self, spec: EmbeddingProviderSpec, cache: Optional[EmbeddingCache] = None
    ) -> None:
        self.spec = spec
        self.cache = cache
        self.calls = 0
        self.__lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.spec.name or "unnamed"

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def prepare(self, text: str) -> str:
        if self.spec.instruction:
            return f"{self.spec.instruction} {text}"
        return text

    @abstractmethod
    def _embed(self, inputs: list[str]) -> EmbeddingBatchResult: ...

    def __embed_counted(self, inputs: list[str]) -> EmbeddingBatchResult:
        with self.__lock:
            self.calls += 1
        return self._embed(inputs)

    def embed_batch(self, texts: Sequence[str]) -> EmbeddingBatchResult:
        """
        Embed the texts, one vector per text, in input order.

        :param texts: A non-empty list of texts, each non-empty after
            cleaning.
        """
        if not texts:
            raise LegalqaPreconditionException("Nothing to embed!")
        for text in texts:
            if not clean_text(text):
                raise LegalqaPreconditionException("Cannot embed an empty text!")

        inputs = [self.prepare(text) for text in texts]
        vectors: list[Optional[Vector]] = [None] * len(inputs)
        if self.cache is not None:
            for i, text in enumerate(inputs):
                vectors[i] = self.cache.get(self.name, text)

        missing = [i for i, v in enumerate(vectors) if v is None]
        token_usage: Optional[int] = None
        attempts = 0
        batch_size = self.spec.batch_size
        for start in range(0, len(missing), batch_size):
            indices = missing[start : start + batch_size]
            result = self.__embed_counted([inputs[i] for i in indices])
            if len(result.vectors) != len(indices):
                raise LegalqaRequestException(
                    f"Provider {self.name} returned {len(result.vectors)} vectors for {len(indices)} inputs"
                )
            attempts += result.attempts
            if result.token_usage is not None:
                token_usage = (token_usage or 0) + result.token_usage
            for i, vector in zip(indices, result.vectors):
                if vector.shape != (self.dimension,):
                    raise LegalqaRequestException(
                        f"Provider {self.name}: dimension mismatch, expected {self.dimension}, got {vector.shape[-1] if vector.ndim else 0}"
                    )
                vectors[i] = vector
                if self.cache is not None:
                    self.cache.put(self.name, inputs[i], vector)

        logger.verbose("Embedded %s texts with %s", len(inputs), self.name)
        return EmbeddingBatchResult(
            vectors=[v for v in vectors if v is not None],
            token_usage=token_usage,
            attempts=attempts,
        )

    def embed(self, text: str) -> Vector:
        return self.embed_batch([text]).vectors[0]


class MockEmbeddingProvider(EmbeddingProvider):
    """Deterministic offline provider, see :func:`mock_embed`."""

    def _embed(self, inputs: list[str]) -> EmbeddingBatchResult:
        return EmbeddingBatchResult(
            vectors=[mock_embed(text, self.dimension, self.spec.seed) for text in inputs]
        )


class RemoteEmbeddingProvider(EmbeddingProvider, RequestHandler):
    """Provider behind the JSON-over-HTTP embedding contract."""

    def __init__(
        self, spec: EmbeddingProviderSpec, cache: Optional[EmbeddingCache] = None
    ) -> None:
        EmbeddingProvider.__init__(self, spec, cache)
        RequestHandler.__init__(
            self,
            name=spec.name or "unnamed",
            endpoint=spec.endpoint,
            auth_env=spec.auth_env,
            timeout=spec.timeout,
            max_attempts=spec.max_attempts,
            backoff_base=spec.backoff_base,
        )

    def _embed(self, inputs: list[str]) -> EmbeddingBatchResult:
        response = self._request({"model": self.spec.model, "input": inputs})
        payload: Any = response.payload
        try:
            data = sorted(payload["data"], key=lambda item: item["index"])
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (TypeError, KeyError, ValueError) as e:
            raise LegalqaRequestException(
                f"Provider {self.name} returned an unexpected payload: {e}", payload
            )
        if [item["index"] for item in data] != list(range(len(inputs))):
            raise LegalqaRequestException(
                f"Provider {self.name} returned incomplete indices", payload
            )
        usage = payload.get("usage") or {}
        return EmbeddingBatchResult(
            vectors=vectors,
            token_usage=usage.get("total_tokens"),
            attempts=response.attempts,
        )


def get_embedding_provider(name: str, config: Config) -> EmbeddingProvider:
    """
    :param name: The name of the provider, for example ``ada``, ``instructor``
        or ``mock``.
    :param config: The configuration that holds the provider specs.
    """
    spec = config.get_embedding_provider_spec(name)
    if spec.kind == "mock":
        return MockEmbeddingProvider(spec)
    cache = None
    if config.embedding_cache_dir is not None:
        cache = EmbeddingCache(config.embedding_cache_dir)
    return RemoteEmbeddingProvider(spec, cache)


