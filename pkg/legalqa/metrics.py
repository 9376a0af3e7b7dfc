"""
Syntactic metrics (Rouge-1, Rouge-2, Rouge-L, BLEU), embedding based semantic
similarity and the aggregation of the expert ratings.

All token based metrics use :func:`legalqa.bm25_index.tokenize`, the same
tokenizer the retrieval uses.
"""

import bisect
import csv
import math
from collections import Counter
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, Union

from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.bm25_index import tokenize
from legalqa.embedding_providers import EmbeddingProvider, cosine_similarity
from legalqa.exceptions import LegalqaDataException, LegalqaPreconditionException
from legalqa.object_types import PRF, RatingRecord


def ngrams(tokens: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_overlap(
    candidate: Counter[tuple[str, ...]], reference: Counter[tuple[str, ...]]
) -> int:
    return sum(min(count, reference[gram]) for gram, count in candidate.items())


def rouge_n(candidate: str, reference: str, n: int = 1) -> PRF:
    """
    Clipped n-gram overlap.

    :param candidate: The generated answer.
    :param reference: The ground truth.
    :param n: The n-gram order, ``1`` for Rouge-1, ``2`` for Rouge-2.
    """
    if n < 1:
        raise LegalqaPreconditionException("n must be at least 1!")
    cand = ngrams(tokenize(candidate), n)
    ref = ngrams(tokenize(reference), n)
    return PRF.from_counts(
        _clipped_overlap(cand, ref), sum(cand.values()), sum(ref.values())
    )


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0] * (len(b) + 1)
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> PRF:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    return PRF.from_counts(lcs_length(cand, ref), len(cand), len(ref))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """
    Sentence level BLEU.

    A precision with a zero numerator is smoothed to
    ``1 / (2 * denominator)``, an order without candidate n-grams is left
    out of the geometric mean. The brevity penalty is
    ``exp(1 - |ref| / |cand|)`` for candidates shorter than the reference.
    """
    if max_n < 1:
        raise LegalqaPreconditionException("max_n must be at least 1!")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0

    log_precisions: list[float] = []
    for n in range(1, max_n + 1):
        cand_ngrams = ngrams(cand, n)
        denominator = sum(cand_ngrams.values())
        if denominator == 0:
            continue
        numerator = _clipped_overlap(cand_ngrams, ngrams(ref, n))
        if numerator == 0:
            log_precisions.append(math.log(1 / (2 * denominator)))
        else:
            log_precisions.append(math.log(numerator / denominator))

    geometric_mean = math.exp(sum(log_precisions) / len(log_precisions))
    if len(cand) >= len(ref):
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1 - len(ref) / len(cand))
    return brevity_penalty * geometric_mean


def semantic_similarity(
    candidate: str, reference: str, provider: EmbeddingProvider
) -> float:
    """Cosine similarity of the embeddings of both texts."""
    if not candidate.strip() or not reference.strip():
        raise LegalqaPreconditionException(
            "Semantic similarity needs two non-empty texts!"
        )
    result = provider.embed_batch([candidate, reference])
    similarity = cosine_similarity(result.vectors[0], result.vectors[1])
    return min(1.0, max(-1.0, similarity))


# Expert ratings #######################################################################


@dataclass
class RatingDistribution:
    """The number of answers per rating score, one row of the expert rating
    table."""

    c1: int = 0
    c2: int = 0
    c3: int = 0
    c4: int = 0
    c5: int = 0

    unrated: int = 0
    """Questions of the run without any rating. They count as zero points,
    so they lower the mean without appearing in a score column."""

    @classmethod
    def from_counts(cls, counts: dict[int, int], unrated: int = 0) -> "RatingDistribution":
        return cls(
            unrated=unrated,
            **{f"c{score}": counts.get(score, 0) for score in range(1, 6)},
        )

    @property
    def counts(self) -> tuple[int, int, int, int, int]:
        return (self.c1, self.c2, self.c3, self.c4, self.c5)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def mean(self) -> float:
        if self.n == 0:
            raise LegalqaPreconditionException("No ratings, no mean.")
        points = sum(score * count for score, count in enumerate(self.counts, 1))
        return points / (self.n + self.unrated)


def aggregate_ratings(
    records: Sequence[RatingRecord],
    run_id: str,
    question_count: Optional[int] = None,
) -> RatingDistribution:
    """
    :param records: Ratings of one or more runs.
    :param run_id: The run to aggregate, for example ``ada-davinci``.
    :param question_count: The number of questions of the run. Questions
        without a rating are counted as :attr:`RatingDistribution.unrated`.
    """
    selected = [record for record in records if record.run_id == run_id]
    if not selected:
        raise LegalqaDataException(f"No ratings for the run {run_id!r}")
    unrated = 0
    if question_count is not None:
        rated = len({record.question_id for record in selected})
        if question_count < rated:
            raise LegalqaPreconditionException(
                f"{rated} questions of the run {run_id!r} are rated, but the run has only {question_count}"
            )
        unrated = question_count - rated
    return RatingDistribution.from_counts(
        Counter(record.score for record in selected), unrated
    )


RATINGS_HEADER = ("run_id", "question_id", "rater_id", "score")


def load_ratings(path: Union[str, Path]) -> list[RatingRecord]:
    """
    Read a ratings CSV file with the header
    ``run_id,question_id,rater_id,score``.
    """
    adapter = TypeAdapter(RatingRecord)
    records: list[RatingRecord] = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as file:
            reader = csv.DictReader(file)
            if tuple(reader.fieldnames or ()) != RATINGS_HEADER:
                raise LegalqaDataException(
                    f"The ratings file {path} needs the header {','.join(RATINGS_HEADER)}",
                    line_number=1,
                )
            for row in reader:
                try:
                    records.append(adapter.validate_python(row))
                except ValidationError as e:
                    raise LegalqaDataException(
                        f"invalid rating: {e.errors()[0]['msg']}",
                        line_number=reader.line_num,
                    )
    except OSError as e:
        raise LegalqaDataException(f"Unable to read the ratings file {path}: {e}")
    return records


# Similarity histogram #################################################################


@dataclass
class HistogramBin:
    lower: float

    upper: float
    """Exclusive, except for the last bin, which is closed at ``1``."""

    count: int


def similarity_histogram(
    scores: Sequence[float], bin_width: float = 0.1
) -> list[HistogramBin]:
    """
    Count the scores per bin of ``bin_width`` over ``[0, 1]``. Negative
    scores are collected by a leading bin ``[-1, 0)``, which only appears
    if there is a negative score.
    """
    if bin_width <= 0:
        raise LegalqaPreconditionException("The bin width must be positive!")
    n_bins = max(1, math.ceil(round(1 / bin_width, 9)))
    lowers = [round(i * bin_width, 10) for i in range(n_bins)]
    uppers = lowers[1:] + [1.0]
    counts = [0] * n_bins
    negative = 0
    for score in scores:
        if not -1.0 <= score <= 1.0:
            raise LegalqaPreconditionException(f"Score {score} is outside of [-1, 1]")
        if score < 0:
            negative += 1
        elif score >= 1.0:
            counts[-1] += 1
        else:
            counts[bisect.bisect_right(lowers, score) - 1] += 1
    bins = [
        HistogramBin(lower=lower, upper=upper, count=count)
        for lower, upper, count in zip(lowers, uppers, counts)
    ]
    if negative:
        bins.insert(0, HistogramBin(lower=-1.0, upper=0.0, count=negative))
    return bins


def write_histogram(bins: Sequence[HistogramBin], path: Optional[Union[str, Path]]) -> str:
    """
    Render the bins as TSV with the header ``lower upper count``.

    :param path: Write to this file if given.

    :returns: The TSV text.
    """
    lines = ["lower\tupper\tcount"]
    for histogram_bin in bins:
        lines.append(f"{histogram_bin.lower:g}\t{histogram_bin.upper:g}\t{histogram_bin.count}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as file:
            file.write(text)
    return text
