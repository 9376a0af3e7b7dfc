"""
The domain types shared by several modules of the pipeline.

Types that belong to a single stage (for example the BM25 index or a run
configuration) live in the module of that stage.
"""

from typing import Annotated, Literal, Optional, TypeAlias

from pydantic import Field
from pydantic.dataclasses import dataclass

NonEmptyStr: TypeAlias = Annotated[str, Field(min_length=1)]

DocumentKind = Literal["judgment", "act", "article"]
"""The three categories of the criminal law corpus: court judgments, acts
and articles."""

document_kinds: tuple[DocumentKind, ...] = ("judgment", "act", "article")


@dataclass(config={"extra": "forbid"})
class RawDocument:
    """
    A legal document as found in the corpus JSONL file, before cleaning.

    .. code-block:: json

        {"id": "ipc", "kind": "act", "title": "Indian Penal Code",
         "text": "...", "source_url": null}
    """

    id: NonEmptyStr

    kind: DocumentKind

    title: str

    text: str
    """The raw text, may contain line breaks and runs of spaces."""

    source_url: Optional[str] = None


@dataclass(config={"extra": "forbid"})
class CleanDocument:
    """A document whose text is normalized: no line breaks, no runs of spaces,
    no leading or trailing whitespace."""

    id: str

    kind: DocumentKind

    title: str

    text: str

    word_count: int
    """Number of whitespace delimited tokens of the cleaned text."""


@dataclass(config={"extra": "forbid"})
class Chunk:
    """A character budgeted fragment of a document, the retrieval unit."""

    chunk_id: str
    """``<doc_id>#<seq>``"""

    doc_id: str

    seq: int
    """0-based, contiguous per document."""

    text: str

    overlap: int = 0
    """Length of the prefix of ``text`` that repeats the end of the previous
    chunk."""


@dataclass
class ScoredChunk:
    chunk_id: str

    score: float


@dataclass
class PRF:
    """Precision, recall and F1 of an overlap metric."""

    precision: float

    recall: float

    f1: float

    @classmethod
    def from_counts(cls, overlap: int, candidate: int, reference: int) -> "PRF":
        precision = overlap / candidate if candidate else 0.0
        recall = overlap / reference if reference else 0.0
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision=precision, recall=recall, f1=f1)


@dataclass(config={"extra": "forbid"})
class RatingRecord:
    """One expert rating of one answer.

    1. The answer is entirely incorrect or fails to provide any answer.
    2. The model misunderstood the question and did not offer a relevant response.
    3. The answer is partly accurate but overlooks essential details.
    4. A comparable, relevant answer to the ground truth.
    5. The answer is entirely accurate and relevant, better than the expert's answer.
    """

    run_id: str

    question_id: str

    rater_id: str

    score: Annotated[int, Field(ge=1, le=5)]


AnswerMode = Literal["generative", "extractive"]


@dataclass
class Answer:
    text: str

    mode: AnswerMode

    abstained: bool

    context_chunk_ids: list[str]

    truncated_context: bool = False

    token_usage: Optional[int] = None
