from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import pytest

from legalqa.bm25_index import build_index
from legalqa.chunker import ChunkerConfig, dump_chunks, split_corpus
from legalqa.config import Config, load_config
from legalqa.corpus_ingest import load_corpus
from legalqa.embedding_providers import EmbeddingProvider, get_embedding_provider
from legalqa.eval_harness import TestCase, load_test_set
from legalqa.object_types import Chunk, CleanDocument
from legalqa.vector_store import VectorStore

pytest_plugins = [
    "pytester",
]


def get_resources_path(relpath: str | Path) -> Path:
    """
    :param relpath: Path relative to ``resources``.
    """
    return (Path(__file__).parent / ".." / "resources" / relpath).resolve()


config_file_path: Path = get_resources_path("config.yml")


def set_env_var() -> None:
    os.environ["LEGALQA_CONFIG_FILE"] = str(config_file_path)


set_env_var()


def write_run_config(directory: Path, **fields: Any) -> Path:
    """Write a run configuration JSON file named after the run."""
    path = directory / f"{fields['name']}.json"
    path.write_text(json.dumps(fields, indent=2), encoding="utf-8")
    return path


class FakeResponse:
    def __init__(self, status_code: int, body: Any = None) -> None:
        self.status_code = status_code
        self.body = body

    @property
    def text(self) -> str:
        return self.body if isinstance(self.body, str) else json.dumps(self.body)

    def json(self) -> Any:
        if isinstance(self.body, str):
            raise ValueError("No JSON")
        return self.body


class FakeServer:
    """Plays back canned responses, an exception in the list is raised
    instead of answering."""

    def __init__(self, *responses: FakeResponse | Exception) -> None:
        self.responses = list(responses)
        self.requests: list[dict[str, Any]] = []
        self.headers: list[dict[str, str]] = []

    def session(self) -> "FakeSession":
        return FakeSession(self)


class FakeSession:
    def __init__(self, server: FakeServer) -> None:
        self.server = server
        self.headers: dict[str, str] = {}

    def post(self, url: str, json: Any, timeout: float) -> FakeResponse:
        self.server.requests.append(json)
        self.server.headers.append(dict(self.headers))
        response = self.server.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response

    def close(self) -> None:
        pass


@pytest.fixture
def config_file() -> Path:
    return config_file_path


@pytest.fixture
def config() -> Config:
    return load_config()


@pytest.fixture
def corpus() -> list[CleanDocument]:
    return load_corpus(get_resources_path("corpus.jsonl"))


@pytest.fixture
def chunker_config() -> ChunkerConfig:
    return ChunkerConfig(separator=".", chunk_size=200, overlap=50)


@pytest.fixture
def chunks(corpus: list[CleanDocument], chunker_config: ChunkerConfig) -> list[Chunk]:
    return split_corpus(corpus, chunker_config)


@pytest.fixture
def test_set() -> list[TestCase]:
    return load_test_set(get_resources_path("testset.json"))


@pytest.fixture
def mock_embedder(config: Config) -> EmbeddingProvider:
    return get_embedding_provider("mock", config)


@pytest.fixture
def store_dir(tmp_path: Path, chunks: list[Chunk], mock_embedder: EmbeddingProvider) -> Path:
    """A directory with the chunks, the BM25 index and a vector store built
    with the mock embedder."""
    dump_chunks(chunks, tmp_path / "chunks.jsonl")
    build_index(chunks).save(tmp_path / "bm25.json")
    VectorStore.build(chunks, mock_embedder).persist(tmp_path / "mock.vs")
    return tmp_path
