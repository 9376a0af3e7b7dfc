import glob
import sys
from pathlib import Path
from typing import Any, Optional

import click
from pydantic import TypeAdapter
from rich import print
from rich.table import Table

from legalqa import get_default_config, set_default_config
from legalqa.bm25_index import build_index
from legalqa.chunker import ChunkerConfig, dump_chunks, load_chunks, split_corpus
from legalqa.corpus_ingest import (
    corpus_stats,
    dump_corpus,
    load_clean_corpus,
    load_corpus,
)
from legalqa.embedding_providers import get_embedding_provider
from legalqa.eval_harness import (
    REPORT_COLUMNS,
    Harness,
    RunResult,
    load_artifacts,
    load_run_config,
    load_run_result,
    load_test_set,
    plot_data,
    report,
    write_report,
)
from legalqa.exceptions import (
    EXIT_USAGE,
    LegalqaDataException,
    LegalqaException,
    get_exit_code,
)
from legalqa.log import logger
from legalqa.metrics import load_ratings
from legalqa.object_types import Chunk, document_kinds
from legalqa.vector_store import VectorStore

DOCUMENTS_FILE = "documents.jsonl"


class LegalqaGroup(click.Group):
    """Maps every failure to one exit code: ``1`` usage error, ``2`` data
    error, ``3`` provider or transport error."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs.pop("standalone_mode", None)
        try:
            return_value = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except LegalqaException as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(get_exit_code(e))
        sys.exit(return_value if isinstance(return_value, int) else 0)


@click.group(cls=LegalqaGroup)
@click.option(
    "-d",
    "--debug",
    count=True,
    help="Increase debug verbosity (use up to 3 times): -d: info -dd: debug -ddd: verbose.",
)
@click.option(
    "--config-file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="The configuration file, see also the environment variable LEGALQA_CONFIG_FILE.",
)
def main(debug: int, config_file: Optional[Path]) -> None:
    """Retrieval augmented question answering over legal documents and its
    evaluation."""
    logger.set_level(debug)
    logger.show_levels()
    set_default_config(config_file)


# corpus ###############################################################################


@click.command()
@click.option(
    "--corpus",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The raw corpus, one JSON document per line.",
)
@click.option(
    "--out",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="The store directory, receives documents.jsonl.",
)
def ingest(corpus: Path, out: Path) -> None:
    """Load and clean the documents and print the corpus statistics."""
    documents = load_corpus(corpus)
    out.mkdir(parents=True, exist_ok=True)
    dump_corpus(documents, out / DOCUMENTS_FILE)
    stats = corpus_stats(documents)
    table = Table("kind", "documents", "average words")
    for kind in document_kinds:
        kind_stats = stats.get(kind)
        table.add_row(kind, str(kind_stats.count), str(kind_stats.display_average))
    table.add_row("total", str(stats.total), "")
    print(table)


@click.command()
@click.option(
    "--store",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="The store directory written by ingest.",
)
@click.option("--size", type=int, help="The chunk size in characters (1000).")
@click.option("--overlap", type=int, help="The overlap in characters (250).")
@click.option("--sep", help='The separator the text is split on (".").')
@click.option(
    "--out",
    type=click.Path(dir_okay=False, path_type=Path),
    help="The chunk JSONL file. Without this option the chunks are written to standard output.",
)
def chunk(
    store: Path,
    size: Optional[int] = None,
    overlap: Optional[int] = None,
    sep: Optional[str] = None,
    out: Optional[Path] = None,
) -> None:
    """Split the documents into overlapping chunks."""
    config = get_default_config()
    cfg = ChunkerConfig(
        separator=sep if sep is not None else config.chunk_separator,
        chunk_size=size if size is not None else config.chunk_size,
        overlap=overlap if overlap is not None else config.chunk_overlap,
    )
    chunks = split_corpus(load_clean_corpus(store / DOCUMENTS_FILE), cfg)
    if out is None:
        adapter = TypeAdapter(Chunk)
        for item in chunks:
            click.echo(adapter.dump_json(item))
    else:
        dump_chunks(chunks, out)


# indices ##############################################################################


@click.command()
@click.option(
    "--chunks",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The chunk JSONL file.",
)
@click.option(
    "--out", required=True, type=click.Path(dir_okay=False, path_type=Path)
)
@click.option("--k1", type=float, help="The term frequency saturation (1.5).")
@click.option("--b", "b", type=float, help="The length normalization (0.75).")
def index_bm25(
    chunks: Path, out: Path, k1: Optional[float] = None, b: Optional[float] = None
) -> None:
    """Build the BM25 index of the chunks."""
    config = get_default_config()
    with logger.stage("index-bm25"):
        index = build_index(
            load_chunks(chunks),
            k1=k1 if k1 is not None else config.bm25_k1,
            b=b if b is not None else config.bm25_b,
        )
        index.save(out)


@click.command()
@click.option(
    "--chunks",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The chunk JSONL file.",
)
@click.option(
    "--provider",
    required=True,
    help="The embedding provider, for example ada, instructor or mock.",
)
@click.option(
    "--out", required=True, type=click.Path(dir_okay=False, path_type=Path)
)
def index_vector(chunks: Path, provider: str, out: Path) -> None:
    """Embed the chunks and persist the vector store."""
    embedder = get_embedding_provider(provider, get_default_config())
    with logger.stage("index-vector"):
        VectorStore.build(load_chunks(chunks), embedder).persist(out)


# answering ############################################################################


@click.command()
@click.option(
    "--config",
    "run_config_file",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The run configuration.",
)
@click.option("--question", required=True)
def query(run_config_file: Path, question: str) -> None:
    """Answer a single question and show the retrieved chunks."""
    run_config = load_run_config(run_config_file)
    run_config.semantic_embedder = None
    harness = Harness(run_config, get_default_config())
    artifacts = load_artifacts(run_config)
    harness.check_artifacts(artifacts)
    answer, retrieved = harness.answer(question, artifacts)
    click.echo(answer.text)
    for scored in retrieved:
        click.echo(f"{scored.chunk_id}\t{scored.score:.4f}")


@click.command(name="eval")
@click.option(
    "--config",
    "run_config_file",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The run configuration.",
)
@click.option(
    "--testset",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help='A JSON list of {"id", "question", "ground_truth"}.',
)
@click.option(
    "--out",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The results JSONL file.",
)
@click.option(
    "--resume",
    is_flag=True,
    help="Skip the questions already answered in the results file, ask failed ones again.",
)
def evaluate(run_config_file: Path, testset: Path, out: Path, resume: bool) -> None:
    """Run every question of the test set through a run configuration."""
    run_config = load_run_config(run_config_file)
    harness = Harness(run_config, get_default_config())
    with logger.stage(f"eval {run_config.name}"):
        result = harness.run(
            load_test_set(testset), load_artifacts(run_config), out, resume=resume
        )
    click.echo(f"{result.name}: {len(result.rows)} rows, {result.error_count} errors")


# reports ##############################################################################


@click.command(name="report")
@click.option(
    "--results",
    "pattern",
    required=True,
    help="A glob pattern of results JSONL files, one per run.",
)
@click.option(
    "--ratings",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Expert ratings CSV: run_id,question_id,rater_id,score.",
)
@click.option(
    "--out", required=True, type=click.Path(dir_okay=False, path_type=Path)
)
def report_command(pattern: str, out: Path, ratings: Optional[Path] = None) -> None:
    """Average the metrics per run and write the report TSV."""
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise LegalqaDataException(f"No results match {pattern}")
    results: list[RunResult] = [load_run_result(path) for path in paths]
    result = report(results, load_ratings(ratings) if ratings else None)
    write_report(result, out)
    table = Table(*REPORT_COLUMNS)
    for row in result.rows:
        table.add_row(
            row.model,
            f"{row.rouge1:.4f}",
            f"{row.rouge2:.4f}",
            f"{row.rouge_l:.4f}",
            f"{row.bleu:.4f}",
            "" if row.semantic is None else f"{row.semantic:.4f}",
            "" if row.rating is None else f"{row.rating:.2f}",
            str(row.rows),
            str(row.errors),
        )
    print(table)


@click.command()
@click.option(
    "--results",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="The results JSONL file of one run.",
)
@click.option(
    "--out", required=True, type=click.Path(dir_okay=False, path_type=Path)
)
@click.option("--bin-width", type=float, default=0.1, show_default=True)
def plot_data_command(results: Path, out: Path, bin_width: float) -> None:
    """Write the histogram of the semantic similarity scores of a run."""
    plot_data(load_run_result(results), bin_width, out)


# other ################################################################################


@click.command()
def dump_config() -> None:
    """Dump the effective configuration."""
    print(get_default_config())


main.add_command(ingest)
main.add_command(chunk)
main.add_command(index_bm25)
main.add_command(index_vector)
main.add_command(query)
main.add_command(evaluate)
main.add_command(report_command)
main.add_command(plot_data_command, "plot-data")
main.add_command(dump_config)
