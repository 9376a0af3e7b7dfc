"""
Split cleaned documents into overlapping, character budgeted chunks.

The text is split on a separator into segments that keep their trailing
separator. Consecutive segments are merged greedily up to ``chunk_size``
characters. A segment longer than ``chunk_size`` becomes a chunk of its
own. Every chunk after the first starts with the longest run of whole
segments from the end of the previous chunk that fits into ``overlap``
characters.
"""

from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Optional, Union

from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.exceptions import LegalqaConfigException, LegalqaDataException
from legalqa.log import logger
from legalqa.object_types import Chunk, CleanDocument


@dataclass(config={"extra": "forbid"})
class ChunkerConfig:
    separator: str = "."

    chunk_size: int = 1000
    """in characters"""

    overlap: int = 250
    """in characters"""

    def __post_init__(self) -> None:
        if not self.separator:
            raise LegalqaConfigException("The separator must not be empty!")
        if self.chunk_size <= 0:
            raise LegalqaConfigException("The chunk size must be positive!")
        if not 0 <= self.overlap < self.chunk_size:
            raise LegalqaConfigException(
                "The overlap must be non-negative and smaller than the chunk size!"
            )


def split_segments(text: str, separator: str) -> list[str]:
    """
    Split ``text`` into segments that keep their trailing separator.

    Only the last segment may lack the separator. Empty segments are dropped.
    """
    pieces = text.split(separator)
    segments = [piece + separator for piece in pieces[:-1]]
    segments.append(pieces[-1])
    return [segment for segment in segments if segment]


def _overlap_prefix(segments: Sequence[str], overlap: int) -> list[str]:
    prefix: list[str] = []
    length = 0
    for segment in reversed(segments):
        if length + len(segment) > overlap:
            break
        prefix.insert(0, segment)
        length += len(segment)
    return prefix


def split_document(doc: CleanDocument, cfg: Optional[ChunkerConfig] = None) -> list[Chunk]:
    """
    Split a document into chunks.

    :param doc: A cleaned document.
    :param cfg: The chunker configuration, defaults to 1000 characters chunk
        size, 250 characters overlap and ``.`` as separator.

    :returns: The chunks in document order.
    """
    if cfg is None:
        cfg = ChunkerConfig()

    texts: list[tuple[str, int]] = []

    # segments of the chunk under construction: the overlap prefix first,
    # then the new segments
    prefix: list[str] = []
    current: list[str] = []
    length = 0

    def emit() -> None:
        nonlocal prefix, current, length
        if current:
            overlap_text = "".join(prefix)
            texts.append((overlap_text + "".join(current), len(overlap_text)))
            prefix = _overlap_prefix(prefix + current, cfg.overlap)
        current = []
        length = sum(len(s) for s in prefix)

    for segment in split_segments(doc.text, cfg.separator):
        if len(segment) > cfg.chunk_size:
            emit()
            texts.append((segment, 0))
            prefix = _overlap_prefix([segment], cfg.overlap)
            length = sum(len(s) for s in prefix)
            continue
        if current and length + len(segment) > cfg.chunk_size:
            emit()
        current.append(segment)
        length += len(segment)
    emit()

    return [
        Chunk(
            chunk_id=f"{doc.id}#{seq}",
            doc_id=doc.id,
            seq=seq,
            text=text,
            overlap=overlap,
        )
        for seq, (text, overlap) in enumerate(texts)
    ]


def split_corpus(
    corpus: Iterable[CleanDocument], cfg: Optional[ChunkerConfig] = None
) -> list[Chunk]:
    chunks: list[Chunk] = []
    for doc in corpus:
        chunks.extend(split_document(doc, cfg))
    logger.info("Created %s chunks", len(chunks))
    return chunks


def dump_chunks(chunks: Iterable[Chunk], path: Union[str, Path]) -> None:
    """Write chunks as JSONL: ``chunk_id``, ``doc_id``, ``seq``, ``text``,
    ``overlap``."""
    adapter = TypeAdapter(Chunk)
    with open(path, "wb") as file:
        for chunk in chunks:
            file.write(adapter.dump_json(chunk) + b"\n")


def load_chunks(path: Union[str, Path]) -> list[Chunk]:
    adapter = TypeAdapter(Chunk)
    chunks: list[Chunk] = []
    try:
        with open(path, "r", encoding="utf-8") as file:
            for line_number, line in enumerate(file, start=1):
                if not line.strip():
                    continue
                try:
                    chunks.append(adapter.validate_json(line))
                except ValidationError as e:
                    raise LegalqaDataException(
                        f"malformed chunk record: {e.errors()[0]['msg']}",
                        line_number=line_number,
                    )
    except OSError as e:
        raise LegalqaDataException(f"Unable to read the chunk file {path}: {e}")
    return chunks
