import dataclasses
import os
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaProviderUnconfiguredException,
)

ProviderKind = Literal["mock", "remote"]
"""``mock`` providers run offline and deterministic, ``remote`` providers
speak the JSON-over-HTTP contract."""

GenerationMode = Literal["generative", "extractive"]

MockBehavior = Literal["echo", "abstain"]


INSTRUCTOR_INSTRUCTION = "Generate embeddings for the document retrieval system."


@dataclass(config={"extra": "forbid"})
class EmbeddingProviderSpec:
    """
    Describes an embedding provider.

    .. code-block:: yaml

        embedding_providers:
          ada:
            endpoint: https://api.openai.com/v1/embeddings
            model: text-embedding-ada-002
            dimension: 1536
            auth_env: OPENAI_API_KEY
    """

    dimension: int
    """The fixed dimension of all vectors, ``1536`` for Ada, ``768`` for
    Instructor-XL."""

    kind: ProviderKind = "remote"

    name: Optional[str] = None
    """Filled in from the key of the provider mapping."""

    instruction: Optional[str] = None
    """Prepended to every input text before embedding."""

    endpoint: Optional[str] = None

    model: Optional[str] = None

    auth_env: Optional[str] = None
    """The name of the environment variable holding the bearer token."""

    batch_size: int = 16

    timeout: float = 60.0

    max_attempts: int = 3

    backoff_base: float = 0.5
    """Seconds to wait after the first failed attempt, doubled afterwards."""

    seed: int = 0
    """Seed of the feature hash of mock providers."""

    def check(self) -> None:
        if self.dimension <= 0:
            raise LegalqaConfigException(
                f"Embedding provider {self.name}: dimension must be positive!"
            )
        if self.kind == "mock" and self.endpoint is not None:
            raise LegalqaConfigException(
                f"Embedding provider {self.name}: mock providers have no endpoint!"
            )
        if self.kind == "mock" and self.dimension < 8:
            raise LegalqaConfigException(
                f"Embedding provider {self.name}: mock dimension must be at least 8!"
            )
        if self.batch_size <= 0 or self.max_attempts <= 0:
            raise LegalqaConfigException(
                f"Embedding provider {self.name}: batch_size and max_attempts must be positive!"
            )


@dataclass(config={"extra": "forbid"})
class GenerationProviderSpec:
    """
    Describes an answer generation provider.

    .. code-block:: yaml

        generation_providers:
          davinci:
            endpoint: https://llm-gateway.example.com/v1/generate
            model: text-davinci-003
            token_budget: 4097
            auth_env: OPENAI_API_KEY
    """

    token_budget: int
    """Tokens available for prompt and completion, ``4097`` for Davinci,
    ``2048`` for Flan-UL2, ``4096`` for Longformer."""

    mode: GenerationMode = "generative"

    kind: ProviderKind = "remote"

    name: Optional[str] = None

    endpoint: Optional[str] = None

    model: Optional[str] = None

    auth_env: Optional[str] = None

    max_output_tokens: int = 256

    temperature: float = 0.0

    timeout: float = 120.0

    max_attempts: int = 3

    backoff_base: float = 0.5

    mock_behavior: Optional[MockBehavior] = None

    @property
    def deterministic_mock(self) -> bool:
        return self.kind == "mock"

    def check(self) -> None:
        if self.token_budget <= 0:
            raise LegalqaConfigException(
                f"Generation provider {self.name}: token_budget must be positive!"
            )
        if self.kind == "mock" and self.endpoint is not None:
            raise LegalqaConfigException(
                f"Generation provider {self.name}: mock providers have no endpoint!"
            )
        if self.max_attempts <= 0:
            raise LegalqaConfigException(
                f"Generation provider {self.name}: max_attempts must be positive!"
            )


def default_embedding_providers() -> dict[str, EmbeddingProviderSpec]:
    """The embedding models of the experiments plus the offline mock."""
    return {
        "ada": EmbeddingProviderSpec(
            dimension=1536, model="text-embedding-ada-002", auth_env="OPENAI_API_KEY"
        ),
        "instructor": EmbeddingProviderSpec(
            dimension=768,
            model="hkunlp/instructor-xl",
            instruction=INSTRUCTOR_INSTRUCTION,
        ),
        "mpnet": EmbeddingProviderSpec(
            dimension=768, model="sentence-transformers/all-mpnet-base-v2"
        ),
        "mock": EmbeddingProviderSpec(dimension=256, kind="mock"),
    }


def default_generation_providers() -> dict[str, GenerationProviderSpec]:
    return {
        "davinci": GenerationProviderSpec(
            token_budget=4097, model="text-davinci-003", auth_env="OPENAI_API_KEY"
        ),
        "chatgpt": GenerationProviderSpec(
            token_budget=4096, model="gpt-3.5-turbo", auth_env="OPENAI_API_KEY"
        ),
        "flan-ul2": GenerationProviderSpec(token_budget=2048, model="google/flan-ul2"),
        "longformer": GenerationProviderSpec(
            token_budget=4096,
            mode="extractive",
            model="valhalla/longformer-base-4096-finetuned-squadv1",
        ),
        "mock-echo": GenerationProviderSpec(
            token_budget=4097, kind="mock", mock_behavior="echo"
        ),
        "mock-abstain": GenerationProviderSpec(
            token_budget=4097, kind="mock", mock_behavior="abstain"
        ),
        "mock-extractive": GenerationProviderSpec(
            token_budget=4096, kind="mock", mode="extractive"
        ),
    }


@dataclass(config={"extra": "forbid"})
class Config:
    """
    The configuration of the whole pipeline.

    .. code-block:: yaml

        ---
        max_in_flight: 4
        chunk_size: 1000
        chunk_overlap: 250
        embedding_providers:
          ada:
            endpoint: https://api.openai.com/v1/embeddings
            dimension: 1536
            auth_env: OPENAI_API_KEY
    """

    config_file: Optional[Path] = None
    """The path of the loaded configuration file."""

    max_in_flight: int = 4
    """Upper bound of concurrent remote requests and concurrently processed
    test cases."""

    chunk_size: int = 1000

    chunk_overlap: int = 250

    chunk_separator: str = "."

    bm25_k1: float = 1.5

    bm25_b: float = 0.75

    embedding_cache_dir: Optional[Path] = None
    """If set, embeddings of remote providers are cached on disk."""

    embedding_providers: dict[str, EmbeddingProviderSpec] = dataclasses.field(
        default_factory=dict
    )
    """Merged over :func:`default_embedding_providers`."""

    generation_providers: dict[str, GenerationProviderSpec] = dataclasses.field(
        default_factory=dict
    )
    """Merged over :func:`default_generation_providers`."""

    def __post_init__(self) -> None:
        self.embedding_providers = {
            **default_embedding_providers(),
            **self.embedding_providers,
        }
        self.generation_providers = {
            **default_generation_providers(),
            **self.generation_providers,
        }
        for name, spec in self.embedding_providers.items():
            spec.name = name
        for name, gen_spec in self.generation_providers.items():
            gen_spec.name = name

    def check(self) -> None:
        """Check if all values are consistent."""
        if self.chunk_size <= 0:
            raise LegalqaConfigException("chunk_size must be positive!")
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise LegalqaConfigException(
                "chunk_overlap must be non-negative and smaller than chunk_size!"
            )
        if not self.chunk_separator:
            raise LegalqaConfigException("chunk_separator must not be empty!")
        if self.bm25_k1 <= 0 or not 0 <= self.bm25_b <= 1:
            raise LegalqaConfigException("Specify bm25_k1 > 0 and 0 <= bm25_b <= 1!")
        if self.max_in_flight < 1:
            raise LegalqaConfigException("max_in_flight must be at least 1!")
        for spec in self.embedding_providers.values():
            spec.check()
        for gen_spec in self.generation_providers.values():
            gen_spec.check()

    def get_embedding_provider_spec(self, name: str) -> EmbeddingProviderSpec:
        if name not in self.embedding_providers:
            raise LegalqaProviderUnconfiguredException(
                f"Unknown embedding provider: {name}"
            )
        return self.embedding_providers[name]

    def get_generation_provider_spec(self, name: str) -> GenerationProviderSpec:
        if name not in self.generation_providers:
            raise LegalqaProviderUnconfiguredException(
                f"Unknown generation provider: {name}"
            )
        return self.generation_providers[name]


def load_config_file(config_file: Optional[Union[str, Path]] = None) -> Config:
    """
    Load the configuration file in YAML format.

    The file path of the loaded configuration file is determined in this order:

    1. The parameter ``config_file`` of this function.
    2. The file path in the environment variable ``LEGALQA_CONFIG_FILE``.
    3. The configuration file ``.legalqa.yml`` in the current working directory.
    4. The configuration file at ``/etc/legalqa/config.yml``.

    :param config_file: The path of the configuration file to load.
    """
    config_files: list[Path] = []
    if config_file:
        config_files.append(Path(config_file))
    if "LEGALQA_CONFIG_FILE" in os.environ:
        config_files.append(Path(os.environ["LEGALQA_CONFIG_FILE"]))
    config_files.append(Path.cwd() / ".legalqa.yml")
    config_files.append(Path("/etc/legalqa/config.yml"))

    found: Optional[Path] = None
    for path in config_files:
        if path.exists():
            found = path
            break

    adapter = TypeAdapter(Config)

    if not found:
        return adapter.validate_python({})

    with open(found, "r") as file:
        config_raw = yaml.safe_load(file) or {}
    config_raw["config_file"] = str(found)
    try:
        return adapter.validate_python(config_raw)
    except ValidationError as e:
        raise LegalqaConfigException(f"Invalid configuration file {found}: {e}")


def load_config(
    config: Optional[Config] = None,
    config_file: Optional[Union[str, Path, Literal[False]]] = None,
    max_in_flight: Optional[int] = None,
    chunk_size: Optional[int] = None,
    chunk_overlap: Optional[int] = None,
    chunk_separator: Optional[str] = None,
    bm25_k1: Optional[float] = None,
    bm25_b: Optional[float] = None,
    embedding_cache_dir: Optional[Union[str, Path]] = None,
) -> Config:
    """
    :param config: A configuration object that has already been populated.
    :param config_file: The path of the configuration file to load.
        If this value is set to false no configuration file will be loaded.
    :param max_in_flight: Upper bound of concurrent remote requests.
    :param chunk_size: The chunk size in characters, for example ``1000``.
    :param chunk_overlap: The overlap between chunks in characters, for
        example ``250``.
    :param chunk_separator: The separator the text is split on, for example ``.``.
    :param bm25_k1: The BM25 term frequency saturation, for example ``1.5``.
    :param bm25_b: The BM25 length normalization, for example ``0.75``.
    :param embedding_cache_dir: A directory to cache embeddings in.
    """
    if config is not None and (config_file is not None and config_file is not False):
        raise LegalqaConfigException("Specify config OR config_file. Not both!")

    c: Config
    if config:
        c = config
    elif config_file is False:
        c = Config()
    else:
        c = load_config_file(config_file)

    if max_in_flight is not None:
        c.max_in_flight = max_in_flight

    if chunk_size is not None:
        c.chunk_size = chunk_size

    if chunk_overlap is not None:
        c.chunk_overlap = chunk_overlap

    if chunk_separator is not None:
        c.chunk_separator = chunk_separator

    if bm25_k1 is not None:
        c.bm25_k1 = bm25_k1

    if bm25_b is not None:
        c.bm25_b = bm25_b

    if embedding_cache_dir is not None:
        c.embedding_cache_dir = Path(embedding_cache_dir)

    c.check()

    return c
