"""
Okapi BM25 inverted index over chunks.

.. math::

    score(q, d) = \\sum_{t} IDF(t) \\cdot
        \\frac{f(t,d) (k_1 + 1)}{f(t,d) + k_1 (1 - b + b |d| / avgdl)}

    IDF(t) = \\ln(1 + (N - n_t + 0.5) / (n_t + 0.5))

The sum runs over the distinct query terms.
"""

import heapq
import json
import math
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import TypeAdapter
from pydantic.dataclasses import dataclass

from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaDataException,
    LegalqaPreconditionException,
)
from legalqa.log import logger
from legalqa.object_types import Chunk, ScoredChunk

INDEX_FORMAT = "legalqa-bm25"

INDEX_VERSION = 1

_token_pattern = re.compile(r"[^\W_]+")


@dataclass(config={"extra": "forbid"})
class TokenizerConfig:
    """Tokens are maximal runs of alphanumeric characters, no stemming, no
    stop words."""

    lowercase: bool = True


def tokenize(text: str, tok: Optional[TokenizerConfig] = None) -> list[str]:
    """
    The one tokenizer of the package, used for indexing, querying, the mock
    embeddings and the metrics.
    """
    if tok is None or tok.lowercase:
        text = text.lower()
    return _token_pattern.findall(text)


@dataclass
class Posting:
    chunk_id: str

    tf: int
    """The term frequency f(t,d)"""


class Bm25Index:
    """
    An immutable inverted index. Build it with :func:`build_index` or
    :meth:`load`.
    """

    k1: float

    b: float

    tokenizer: TokenizerConfig

    postings: dict[str, list[Posting]]
    """term → postings sorted by chunk id"""

    lengths: dict[str, int]
    """chunk id → |d| in tokens"""

    avgdl: float

    def __init__(
        self,
        postings: dict[str, list[Posting]],
        lengths: dict[str, int],
        k1: float = 1.5,
        b: float = 0.75,
        tokenizer: Optional[TokenizerConfig] = None,
    ) -> None:
        self.postings = postings
        self.lengths = lengths
        self.k1 = k1
        self.b = b
        self.tokenizer = tokenizer if tokenizer is not None else TokenizerConfig()
        self.avgdl = sum(lengths.values()) / len(lengths) if lengths else 0.0
        self.__tf: dict[str, dict[str, int]] = {
            term: {p.chunk_id: p.tf for p in plist} for term, plist in postings.items()
        }

    @property
    def N(self) -> int:
        return len(self.lengths)

    def document_frequency(self, term: str) -> int:
        """n_t: the number of chunks containing the term."""
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        n_t = self.document_frequency(term)
        return math.log(1 + (self.N - n_t + 0.5) / (n_t + 0.5))

    def term_weight(self, term: str, tf: int, chunk_id: str) -> float:
        """The contribution of one query term to the score of one chunk."""
        dl = self.lengths[chunk_id]
        norm = 1 - self.b + self.b * dl / self.avgdl
        return self.idf(term) * (tf * (self.k1 + 1)) / (tf + self.k1 * norm)

    def query_terms(self, query: Union[str, Iterable[str]]) -> list[str]:
        """The distinct query terms in a fixed order."""
        tokens = tokenize(query, self.tokenizer) if isinstance(query, str) else query
        return sorted(set(tokens))

    def score(self, query_tokens: Union[str, Iterable[str]], chunk_id: str) -> float:
        """
        The BM25 score of one chunk.

        :param query_tokens: The query, either as tokens or as raw text.
        :param chunk_id: The chunk to score.
        """
        if chunk_id not in self.lengths:
            raise LegalqaPreconditionException(f"Unknown chunk id: {chunk_id}")
        weights: list[float] = []
        for term in self.query_terms(query_tokens):
            tf = self.__tf.get(term, {}).get(chunk_id)
            if tf:
                weights.append(self.term_weight(term, tf, chunk_id))
        return math.fsum(weights)

    def retrieve_top_k(self, query: str, k: int = 3) -> list[ScoredChunk]:
        """
        The ``k`` chunks with the highest score, ties broken by ascending
        chunk id. Chunks without any query term pad the result with score
        ``0.0``.
        """
        if k < 1:
            raise LegalqaPreconditionException("k must be at least 1!")
        # fsum rounds exactly once, equal weight sets tie exactly
        weights: dict[str, list[float]] = {}
        for term in self.query_terms(query):
            for posting in self.postings.get(term, ()):
                weights.setdefault(posting.chunk_id, []).append(
                    self.term_weight(term, posting.tf, posting.chunk_id)
                )
        scores = {cid: math.fsum(ws) for cid, ws in weights.items()}

        ranked = heapq.nsmallest(k, scores.items(), key=lambda item: (-item[1], item[0]))
        result = [ScoredChunk(chunk_id=cid, score=score) for cid, score in ranked]
        if len(result) < k:
            padding = heapq.nsmallest(
                k - len(result), (cid for cid in self.lengths if cid not in scores)
            )
            result.extend(ScoredChunk(chunk_id=cid, score=0.0) for cid in padding)
        logger.verbose("BM25 query %s: %s", query, [r.chunk_id for r in result])
        return result

    def save(self, path: Union[str, Path]) -> None:
        """
        Persist the index as one JSON file: format tag, version, parameters,
        chunk lengths and postings.
        """
        data: dict[str, Any] = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "k1": self.k1,
            "b": self.b,
            "tokenizer": {"lowercase": self.tokenizer.lowercase},
            "N": self.N,
            "avgdl": self.avgdl,
            "lengths": self.lengths,
            "postings": {
                term: [[p.chunk_id, p.tf] for p in plist]
                for term, plist in sorted(self.postings.items())
            },
        }
        with open(path, "w", encoding="utf-8") as file:
            json.dump(data, file, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Bm25Index":
        try:
            with open(path, "r", encoding="utf-8") as file:
                data = json.load(file)
        except (OSError, json.JSONDecodeError) as e:
            raise LegalqaDataException(f"Unable to read the BM25 index {path}: {e}")
        if not isinstance(data, dict) or data.get("format") != INDEX_FORMAT:
            raise LegalqaDataException(f"{path} is not a BM25 index file.")
        if data.get("version") != INDEX_VERSION:
            raise LegalqaDataException(
                f"Unsupported BM25 index version {data.get('version')} in {path}"
            )
        try:
            postings = TypeAdapter(dict[str, list[tuple[str, int]]]).validate_python(
                data["postings"]
            )
            lengths = TypeAdapter(dict[str, int]).validate_python(data["lengths"])
            tokenizer = TypeAdapter(TokenizerConfig).validate_python(data["tokenizer"])
            k1, b = float(data["k1"]), float(data["b"])
        except (KeyError, TypeError, ValueError) as e:  # ValidationError is a ValueError
            raise LegalqaDataException(f"Corrupt BM25 index {path}: {e}")
        return cls(
            postings={
                term: [Posting(chunk_id=cid, tf=tf) for cid, tf in plist]
                for term, plist in postings.items()
            },
            lengths=lengths,
            k1=k1,
            b=b,
            tokenizer=tokenizer,
        )


def build_index(
    chunks: Sequence[Chunk],
    tok: Optional[TokenizerConfig] = None,
    k1: float = 1.5,
    b: float = 0.75,
) -> Bm25Index:
    """
    :param chunks: The chunks to index, chunk ids must be unique.
    :param tok: The tokenizer configuration.
    :param k1: The term frequency saturation, must be positive.
    :param b: The length normalization, between 0 and 1.
    """
    if k1 <= 0 or not 0 <= b <= 1:
        raise LegalqaConfigException("Specify k1 > 0 and 0 <= b <= 1!")
    if tok is None:
        tok = TokenizerConfig()
    lengths: dict[str, int] = {}
    postings: dict[str, list[Posting]] = {}
    for chunk in chunks:
        if chunk.chunk_id in lengths:
            raise LegalqaDataException(f"Duplicate chunk id: {chunk.chunk_id}")
        tokens = tokenize(chunk.text, tok)
        lengths[chunk.chunk_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append(Posting(chunk_id=chunk.chunk_id, tf=tf))
    for plist in postings.values():
        plist.sort(key=lambda p: p.chunk_id)
    logger.info("Indexed %s chunks, %s terms", len(lengths), len(postings))
    return Bm25Index(postings=postings, lengths=lengths, k1=k1, b=b, tokenizer=tok)
