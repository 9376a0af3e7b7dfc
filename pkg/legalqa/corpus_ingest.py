"""
Load pre-fetched legal documents, normalize their text and compute the
corpus statistics (document count and average word count per kind).
"""

from collections.abc import Sequence
from pathlib import Path
from typing import Union

from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.exceptions import LegalqaDataException
from legalqa.log import logger
from legalqa.object_types import (
    CleanDocument,
    DocumentKind,
    RawDocument,
    document_kinds,
)


def clean_text(raw: str) -> str:
    """
    Remove line breaks and unnecessary spaces: every run of Unicode
    whitespace becomes a single ASCII space, leading and trailing
    whitespace is stripped.
    """
    return " ".join(raw.split())


def clean_document(raw: RawDocument) -> CleanDocument:
    text = clean_text(raw.text)
    return CleanDocument(
        id=raw.id,
        kind=raw.kind,
        title=clean_text(raw.title),
        text=text,
        word_count=len(text.split()),
    )


def load_corpus(path: Union[str, Path]) -> list[CleanDocument]:
    """
    Load a corpus JSONL file, one :class:`RawDocument` per line.

    :param path: The path of the corpus file.

    :returns: The cleaned documents in file order.
    """
    adapter = TypeAdapter(RawDocument)
    documents: list[CleanDocument] = []
    seen: set[str] = set()
    try:
        with open(path, "r", encoding="utf-8") as file:
            for line_number, line in enumerate(file, start=1):
                if not line.strip():
                    continue
                try:
                    raw = adapter.validate_json(line)
                except ValidationError as e:
                    raise LegalqaDataException(
                        f"malformed corpus record: {e.errors()[0]['msg']}",
                        line_number=line_number,
                    )
                if raw.id in seen:
                    raise LegalqaDataException(
                        f"duplicate document id {raw.id!r}", line_number=line_number
                    )
                seen.add(raw.id)
                documents.append(clean_document(raw))
    except OSError as e:
        raise LegalqaDataException(f"Unable to read the corpus file {path}: {e}")
    logger.info("Loaded %s documents from %s", len(documents), path)
    return documents


def dump_corpus(documents: Sequence[CleanDocument], path: Union[str, Path]) -> None:
    """Write cleaned documents as JSONL, one document per line."""
    adapter = TypeAdapter(CleanDocument)
    with open(path, "wb") as file:
        for document in documents:
            file.write(adapter.dump_json(document) + b"\n")


def load_clean_corpus(path: Union[str, Path]) -> list[CleanDocument]:
    """Read a file written by :func:`dump_corpus`."""
    adapter = TypeAdapter(CleanDocument)
    try:
        with open(path, "r", encoding="utf-8") as file:
            return [adapter.validate_json(line) for line in file if line.strip()]
    except (OSError, ValidationError) as e:
        raise LegalqaDataException(f"Unable to read the document store {path}: {e}")


@dataclass
class KindStats:
    count: int = 0

    average_word_count: float = 0.0

    @property
    def display_average(self) -> int:
        """The average rounded to the nearest integer."""
        return round(self.average_word_count)


@dataclass
class CorpusStats:
    judgment: KindStats

    act: KindStats

    article: KindStats

    @property
    def total(self) -> int:
        return self.judgment.count + self.act.count + self.article.count

    def get(self, kind: DocumentKind) -> KindStats:
        return getattr(self, kind)


def corpus_stats(corpus: Sequence[CleanDocument]) -> CorpusStats:
    per_kind: dict[str, list[int]] = {kind: [] for kind in document_kinds}
    for document in corpus:
        per_kind[document.kind].append(document.word_count)
    stats: dict[str, KindStats] = {}
    for kind, counts in per_kind.items():
        if counts:
            stats[kind] = KindStats(
                count=len(counts), average_word_count=sum(counts) / len(counts)
            )
        else:
            stats[kind] = KindStats()
    return CorpusStats(**stats)
