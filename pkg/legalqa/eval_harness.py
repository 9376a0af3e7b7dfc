"""
End-to-end runs of a retriever and generator combination over a test set,
the per-question results JSONL and the reports built from it.

A run configuration (JSON or YAML):

.. code-block:: json

    {
        "name": "ada-davinci",
        "retriever": "embedding",
        "embedder": "ada",
        "generator": "davinci",
        "prompt": "davinci_legal",
        "k": 4,
        "semantic_embedder": "mpnet",
        "chunks": "store/chunks.jsonl",
        "vector_store": "store/ada.vs"
    }

Relative artifact paths are resolved against the directory of the run
configuration file.
"""

import os
import time
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import IO, Literal, Optional, Union

import yaml
from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.answer_generation import (
    GenerationProvider,
    TemplateId,
    direct_answer,
    extract_answer,
    generate_answer,
    get_generation_provider,
    get_template,
)
from legalqa.bm25_index import Bm25Index
from legalqa.chunker import load_chunks
from legalqa.config import Config, EmbeddingProviderSpec, GenerationProviderSpec
from legalqa.embedding_providers import EmbeddingProvider, get_embedding_provider
from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaDataException,
    LegalqaException,
    LegalqaProviderUnconfiguredException,
)
from legalqa.log import logger
from legalqa.metrics import (
    aggregate_ratings,
    bleu,
    rouge_l,
    rouge_n,
    semantic_similarity,
    similarity_histogram,
    write_histogram,
)
from legalqa.object_types import PRF, Answer, Chunk, NonEmptyStr, RatingRecord, ScoredChunk
from legalqa.vector_store import VectorStore

RetrieverKind = Literal["embedding", "bm25", "none"]

default_k: dict[RetrieverKind, int] = {"embedding": 4, "bm25": 3, "none": 0}


@dataclass(config={"extra": "forbid"})
class TestCase:
    """A question with the answer of a lawyer."""

    __test__ = False

    id: NonEmptyStr

    question: NonEmptyStr

    ground_truth: NonEmptyStr


def load_test_set(path: Union[str, Path]) -> list[TestCase]:
    """
    Read a JSON list of ``{"id", "question", "ground_truth"}`` objects.
    """
    try:
        with open(path, "rb") as file:
            test_set = TypeAdapter(list[TestCase]).validate_json(file.read())
    except OSError as e:
        raise LegalqaDataException(f"Unable to read the test set {path}: {e}")
    except ValidationError as e:
        raise LegalqaDataException(f"Invalid test set {path}: {e}")
    seen: set[str] = set()
    for case in test_set:
        if case.id in seen:
            raise LegalqaDataException(f"Duplicate test case id {case.id!r} in {path}")
        seen.add(case.id)
    return test_set


@dataclass(config={"extra": "forbid"})
class RunConfig:
    """One retriever and generator combination."""

    name: NonEmptyStr
    """The model name of the report, for example ``ada-davinci``."""

    retriever: RetrieverKind

    generator: NonEmptyStr
    """The name of a generation provider, for example ``davinci``."""

    embedder: Optional[str] = None
    """The name of the embedding provider of the retrieval. Required for the
    retriever ``embedding``."""

    prompt: TemplateId = "davinci_legal"

    k: Optional[int] = None
    """Number of retrieved chunks, ``4`` for the embedding retrieval and
    ``3`` for BM25 if not set."""

    seed: int = 0

    semantic_embedder: Optional[str] = "mpnet"
    """The embedding provider of the semantic similarity metric. ``None``
    disables the metric."""

    chunks: Optional[Path] = None

    bm25_index: Optional[Path] = None

    vector_store: Optional[Path] = None

    max_in_flight: Optional[int] = None
    """Concurrently processed test cases. Falls back to the configuration."""

    def __post_init__(self) -> None:
        if self.k is None:
            self.k = default_k[self.retriever]

    def check(self) -> None:
        if self.retriever == "embedding" and not self.embedder:
            raise LegalqaConfigException(
                f"Run {self.name}: the embedding retriever needs an embedder!"
            )
        if self.retriever != "none" and (self.k is None or self.k < 1):
            raise LegalqaConfigException(f"Run {self.name}: k must be at least 1!")
        if self.retriever == "none" and self.prompt != "none":
            raise LegalqaConfigException(
                f"Run {self.name}: without retrieval the bare question is sent, use the prompt none!"
            )
        if self.max_in_flight is not None and self.max_in_flight < 1:
            raise LegalqaConfigException(
                f"Run {self.name}: max_in_flight must be at least 1!"
            )

    def resolve_paths(self, base: Path) -> None:
        for attribute in ("chunks", "bm25_index", "vector_store"):
            path: Optional[Path] = getattr(self, attribute)
            if path is not None and not path.is_absolute():
                setattr(self, attribute, (base / path).resolve())


def load_run_config(path: Union[str, Path]) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as file:
            raw = yaml.safe_load(file)
    except OSError as e:
        raise LegalqaConfigException(f"Unable to read the run configuration {path}: {e}")
    except yaml.YAMLError as e:
        raise LegalqaConfigException(f"Invalid run configuration {path}: {e}")
    try:
        run_config = TypeAdapter(RunConfig).validate_python(raw)
    except ValidationError as e:
        raise LegalqaConfigException(f"Invalid run configuration {path}: {e}")
    run_config.resolve_paths(Path(path).parent)
    run_config.check()
    return run_config


class CorpusArtifacts:
    """The chunks and indices a run retrieves from."""

    chunks: dict[str, Chunk]

    bm25: Optional[Bm25Index]

    vectors: Optional[VectorStore]

    def __init__(
        self,
        chunks: Optional[Sequence[Chunk]] = None,
        bm25: Optional[Bm25Index] = None,
        vectors: Optional[VectorStore] = None,
    ) -> None:
        self.chunks = {chunk.chunk_id: chunk for chunk in chunks or []}
        self.bm25 = bm25
        self.vectors = vectors

    def get_chunks(self, scored: Sequence[ScoredChunk]) -> list[Chunk]:
        missing = [s.chunk_id for s in scored if s.chunk_id not in self.chunks]
        if missing:
            raise LegalqaDataException(
                f"The index references unknown chunks: {', '.join(missing)}"
            )
        return [self.chunks[s.chunk_id] for s in scored]


def load_artifacts(run_config: RunConfig) -> CorpusArtifacts:
    """Load the artifacts the retriever of the run configuration needs."""
    if run_config.retriever == "none":
        return CorpusArtifacts()
    if run_config.chunks is None:
        raise LegalqaDataException(f"Run {run_config.name}: no chunk file configured")
    chunks = load_chunks(run_config.chunks)
    if run_config.retriever == "bm25":
        if run_config.bm25_index is None:
            raise LegalqaDataException(f"Run {run_config.name}: no BM25 index configured")
        return CorpusArtifacts(chunks, bm25=Bm25Index.load(run_config.bm25_index))
    if run_config.vector_store is None:
        raise LegalqaDataException(f"Run {run_config.name}: no vector store configured")
    return CorpusArtifacts(chunks, vectors=VectorStore.load(run_config.vector_store))


# Results ##############################################################################


@dataclass
class RowResult:
    """The outcome of one test case. Rows with an ``error`` carry no answer
    and no metrics."""

    run: str

    question_id: str

    question: str

    ground_truth: str

    retrieved: list[ScoredChunk]

    wall_time: float
    """Seconds."""

    answer: Optional[Answer] = None

    rouge1: Optional[PRF] = None

    rouge2: Optional[PRF] = None

    rouge_l: Optional[PRF] = None

    bleu: Optional[float] = None

    semantic: Optional[float] = None

    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunResult:
    name: str

    rows: list[RowResult]

    @property
    def ok_rows(self) -> list[RowResult]:
        return [row for row in self.rows if row.ok]

    @property
    def error_count(self) -> int:
        return len(self.rows) - len(self.ok_rows)


row_adapter = TypeAdapter(RowResult)


def load_run_result(
    path: Union[str, Path], name: Optional[str] = None, partial: bool = False
) -> RunResult:
    """
    Read a results JSONL file.

    :param path: The results file of one run.
    :param name: The run name for a file without rows. Defaults to the
        file name without suffix.
    :param partial: Drop an unparsable last line instead of failing. A run
        that was killed while appending a row leaves such a line behind.
    """
    try:
        with open(path, "r", encoding="utf-8") as file:
            lines = [
                (line_number, line)
                for line_number, line in enumerate(file, start=1)
                if line.strip()
            ]
    except OSError as e:
        raise LegalqaDataException(f"Unable to read the results {path}: {e}")
    rows: list[RowResult] = []
    for index, (line_number, line) in enumerate(lines):
        try:
            rows.append(row_adapter.validate_json(line))
        except ValidationError as e:
            message = e.errors()[0]["msg"]
            if partial and index == len(lines) - 1:
                logger.warning(
                    "%s: dropping the incomplete last row (line %s): %s",
                    path,
                    line_number,
                    message,
                )
                break
            raise LegalqaDataException(
                f"malformed result row: {message}", line_number=line_number
            )
    names = {row.run for row in rows}
    if len(names) > 1:
        raise LegalqaDataException(
            f"{path} mixes the runs {', '.join(sorted(names))}"
        )
    if names:
        name = names.pop()
    return RunResult(name=name or Path(path).stem, rows=rows)


# Harness ##############################################################################


def _replace_results(path: Union[str, Path], rows: Sequence[RowResult]) -> None:
    """Replace the results file by ``rows`` in one rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as file:
        for row in rows:
            file.write(row_adapter.dump_json(row) + b"\n")
    os.replace(tmp, path)


def _pinned_clock() -> float:
    return 0.0


def _check_configured(spec: Union[EmbeddingProviderSpec, GenerationProviderSpec]) -> None:
    if spec.kind == "remote" and not spec.endpoint:
        raise LegalqaProviderUnconfiguredException(
            f"Provider {spec.name} has no endpoint configured!"
        )


class Harness:
    """
    Runs one :class:`RunConfig`. The providers are created once and shared
    by all test cases, their ``calls`` counters show how many requests a
    run needed.
    """

    run_config: RunConfig

    config: Config

    generator: GenerationProvider

    embedder: Optional[EmbeddingProvider]
    """The embedder of the retrieval."""

    semantic_embedder: Optional[EmbeddingProvider]

    clock: Callable[[], float]

    def __init__(
        self,
        run_config: RunConfig,
        config: Config,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        """
        :param run_config: The run to execute.
        :param config: The configuration that holds the provider specs.
        :param clock: The source of the wall time. Defaults to
            :func:`time.perf_counter`, runs on mock providers only record
            a wall time of ``0.0``.
        """
        run_config.check()
        self.run_config = run_config
        self.config = config

        gen_spec = config.get_generation_provider_spec(run_config.generator)
        _check_configured(gen_spec)
        self.generator = get_generation_provider(run_config.generator, config)
        self.generator.seed = run_config.seed
        if run_config.retriever == "none" and self.generator.mode != "generative":
            raise LegalqaConfigException(
                f"Run {run_config.name}: an extractive model needs retrieved context!"
            )
        if (
            run_config.retriever != "none"
            and self.generator.mode == "generative"
            and run_config.prompt == "none"
        ):
            raise LegalqaConfigException(
                f"Run {run_config.name}: the prompt none cannot carry retrieved context!"
            )

        self.embedder = None
        if run_config.retriever == "embedding" and run_config.embedder:
            _check_configured(config.get_embedding_provider_spec(run_config.embedder))
            self.embedder = get_embedding_provider(run_config.embedder, config)

        self.semantic_embedder = None
        if run_config.semantic_embedder:
            _check_configured(
                config.get_embedding_provider_spec(run_config.semantic_embedder)
            )
            self.semantic_embedder = get_embedding_provider(
                run_config.semantic_embedder, config
            )

        if clock is None:
            clock = _pinned_clock if self.deterministic else time.perf_counter
        self.clock = clock

    @property
    def deterministic(self) -> bool:
        """True if every provider of the run is a mock, so that two runs
        write identical results files."""
        specs: list[Union[EmbeddingProviderSpec, GenerationProviderSpec]] = [
            self.config.get_generation_provider_spec(self.run_config.generator)
        ]
        for embedder in (self.embedder, self.semantic_embedder):
            if embedder is not None:
                specs.append(self.config.get_embedding_provider_spec(embedder.name))
        return all(spec.kind == "mock" for spec in specs)

    @property
    def max_workers(self) -> int:
        return self.run_config.max_in_flight or self.config.max_in_flight

    def check_artifacts(self, artifacts: CorpusArtifacts) -> None:
        retriever = self.run_config.retriever
        if retriever == "bm25" and artifacts.bm25 is None:
            raise LegalqaDataException(f"Run {self.run_config.name}: the BM25 index is missing")
        if retriever == "embedding":
            if artifacts.vectors is None:
                raise LegalqaDataException(
                    f"Run {self.run_config.name}: the vector store is missing"
                )
            if self.embedder is not None:
                artifacts.vectors.check_provider(self.embedder.name)

    def retrieve(self, question: str, artifacts: CorpusArtifacts) -> list[ScoredChunk]:
        k = self.run_config.k or 0
        if self.run_config.retriever == "bm25" and artifacts.bm25 is not None:
            return artifacts.bm25.retrieve_top_k(question, k)
        if (
            self.run_config.retriever == "embedding"
            and artifacts.vectors is not None
            and self.embedder is not None
        ):
            return artifacts.vectors.knn_query(self.embedder.embed(question), k)
        return []

    def answer(
        self, question: str, artifacts: CorpusArtifacts
    ) -> tuple[Answer, list[ScoredChunk]]:
        """Retrieve and answer a single question."""
        if self.run_config.retriever == "none":
            return direct_answer(self.generator, question), []
        retrieved = self.retrieve(question, artifacts)
        chunks = artifacts.get_chunks(retrieved)
        if self.generator.mode == "extractive":
            return extract_answer(self.generator, question, chunks), retrieved
        template = get_template(self.run_config.prompt)
        return generate_answer(self.generator, template, question, chunks), retrieved

    def run_case(self, case: TestCase, artifacts: CorpusArtifacts) -> RowResult:
        """
        Answer and score one test case. Failures of the pipeline are
        recorded in the row instead of being raised.
        """
        start = self.clock()
        row = RowResult(
            run=self.run_config.name,
            question_id=case.id,
            question=case.question,
            ground_truth=case.ground_truth,
            retrieved=[],
            wall_time=0.0,
        )
        try:
            answer, row.retrieved = self.answer(case.question, artifacts)
            rouge1 = rouge_n(answer.text, case.ground_truth, 1)
            rouge2 = rouge_n(answer.text, case.ground_truth, 2)
            longest = rouge_l(answer.text, case.ground_truth)
            score = bleu(answer.text, case.ground_truth)
            semantic: Optional[float] = None
            if self.semantic_embedder is not None:
                semantic = 0.0
                if answer.text.strip():
                    semantic = semantic_similarity(
                        answer.text, case.ground_truth, self.semantic_embedder
                    )
        except LegalqaException as e:
            logger.warning("%s: question %s failed: %s", self.run_config.name, case.id, e)
            row.error = f"{e.__class__.__name__}: {e}"
        else:
            row.answer = answer
            row.rouge1 = rouge1
            row.rouge2 = rouge2
            row.rouge_l = longest
            row.bleu = score
            row.semantic = semantic
        row.wall_time = self.clock() - start
        logger.debug(
            "%s: question %s answered in %ss", self.run_config.name, case.id, row.wall_time
        )
        return row

    def __iter_rows(
        self, cases: Sequence[TestCase], artifacts: CorpusArtifacts
    ) -> Iterator[RowResult]:
        if self.max_workers == 1:
            for case in cases:
                yield self.run_case(case, artifacts)
            return
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self.run_case, case, artifacts) for case in cases]
            # in test set order, a row waits for the rows before it
            for future in futures:
                yield future.result()

    def run(
        self,
        test_set: Sequence[TestCase],
        artifacts: CorpusArtifacts,
        results_path: Optional[Union[str, Path]] = None,
        resume: bool = False,
    ) -> RunResult:
        """
        Run every test case. Each row is appended to ``results_path`` as soon
        as it and every row before it in the test set are complete.

        :param test_set: The questions.
        :param artifacts: The chunks and indices to retrieve from.
        :param results_path: The JSONL file of the run.
        :param resume: Keep the successful rows already in ``results_path``
            and skip their question ids. Rows with an error and an
            incomplete last line are removed from the file and their
            questions are asked again.
        """
        self.check_artifacts(artifacts)
        rows: list[RowResult] = []
        if resume and results_path is not None and Path(results_path).exists():
            previous = load_run_result(results_path, self.run_config.name, partial=True).rows
            other = {row.run for row in previous} - {self.run_config.name}
            if other:
                raise LegalqaDataException(
                    f"{results_path} holds the results of {', '.join(sorted(other))}"
                )
            rows = [row for row in previous if row.ok]
            _replace_results(results_path, rows)
            if len(rows) < len(previous):
                logger.info(
                    "Run %s: retrying %s failed questions",
                    self.run_config.name,
                    len(previous) - len(rows),
                )
        done = {row.question_id for row in rows}
        todo = [case for case in test_set if case.id not in done]
        logger.info(
            "Run %s: %s questions, %s already done", self.run_config.name, len(todo), len(done)
        )

        file: Optional[IO[bytes]] = None
        if results_path is not None:
            file = open(results_path, "ab" if resume else "wb")
        try:
            for row in self.__iter_rows(todo, artifacts):
                rows.append(row)
                if file is not None:
                    file.write(row_adapter.dump_json(row) + b"\n")
                    file.flush()
        finally:
            if file is not None:
                file.close()
        return RunResult(name=self.run_config.name, rows=rows)


# Reports ##############################################################################


@dataclass
class ReportRow:
    model: str

    rouge1: float

    rouge2: float

    rouge_l: float

    bleu: float

    semantic: Optional[float]

    rating: Optional[float]

    rows: int
    """Number of rows the means are taken over."""

    errors: int
    """Number of failed rows, excluded from the means."""


@dataclass
class Report:
    rows: list[ReportRow]


REPORT_COLUMNS = (
    "model",
    "rouge1",
    "rouge2",
    "rougeL",
    "bleu",
    "semantic",
    "rating",
    "rows",
    "errors",
)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _report_row(result: RunResult, ratings: Optional[Sequence[RatingRecord]]) -> ReportRow:
    if not result.rows:
        raise LegalqaDataException(f"The run {result.name} has no results!")
    ok = result.ok_rows
    if not ok:
        raise LegalqaDataException(f"Every question of the run {result.name} failed!")
    semantic = [row.semantic for row in ok if row.semantic is not None]
    rating: Optional[float] = None
    if ratings:
        question_ids = {row.question_id for row in result.rows}
        joined = [r for r in ratings if r.run_id == result.name and r.question_id in question_ids]
        if joined:
            rating = aggregate_ratings(joined, result.name, len(question_ids)).mean
    return ReportRow(
        model=result.name,
        rouge1=_mean([row.rouge1.f1 for row in ok if row.rouge1]),
        rouge2=_mean([row.rouge2.f1 for row in ok if row.rouge2]),
        rouge_l=_mean([row.rouge_l.f1 for row in ok if row.rouge_l]),
        bleu=_mean([row.bleu for row in ok if row.bleu is not None]),
        semantic=_mean(semantic) if semantic else None,
        rating=rating,
        rows=len(ok),
        errors=result.error_count,
    )


def report(
    results: Sequence[RunResult], ratings: Optional[Sequence[RatingRecord]] = None
) -> Report:
    """
    The means of the successful rows per run, ordered by run name.

    :param results: One result per run.
    :param ratings: Expert ratings, joined on run name and question id.
    """
    names = [result.name for result in results]
    if len(set(names)) != len(names):
        raise LegalqaDataException("Two results share a run name!")
    rows = [_report_row(result, ratings) for result in results]
    return Report(rows=sorted(rows, key=lambda row: row.model))


def _format(value: Optional[float], digits: int) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def write_report(result: Report, path: Optional[Union[str, Path]] = None) -> str:
    """
    Render the report as TSV, metrics with four decimals and the rating with
    two, followed by the number of scored and of failed rows.

    :returns: The TSV text.
    """
    lines = ["\t".join(REPORT_COLUMNS)]
    for row in result.rows:
        lines.append(
            "\t".join(
                [
                    row.model,
                    _format(row.rouge1, 4),
                    _format(row.rouge2, 4),
                    _format(row.rouge_l, 4),
                    _format(row.bleu, 4),
                    _format(row.semantic, 4),
                    _format(row.rating, 2),
                    str(row.rows),
                    str(row.errors),
                ]
            )
        )
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as file:
            file.write(text)
    return text


def plot_data(
    result: RunResult,
    bin_width: float = 0.1,
    path: Optional[Union[str, Path]] = None,
) -> str:
    """
    The histogram of the semantic similarity scores of one run as TSV.
    """
    scores = [row.semantic for row in result.ok_rows if row.semantic is not None]
    if not scores:
        raise LegalqaDataException(f"The run {result.name} has no semantic scores!")
    return write_histogram(similarity_histogram(scores, bin_width), path)

