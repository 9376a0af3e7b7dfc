"""
legalqa is a retrieval augmented question answering pipeline for legal
documents together with the harness that evaluates it: corpus ingestion,
chunking, BM25 and embedding retrieval, prompted answer generation behind
provider abstractions and Rouge, BLEU, semantic similarity and expert rating
reports.
"""

from pathlib import Path
from typing import Literal, Optional

from legalqa.config import Config, load_config
from legalqa.request_handler import set_max_in_flight

__config: Optional[Config] = None


def set_default_config(
    config_file: Optional[str | Path | Literal[False]] = None,
    max_in_flight: Optional[int] = None,
    embedding_cache_dir: Optional[str | Path] = None,
) -> Config:
    """
    Set and load the default configuration.

    :param config_file: The path of the configuration file to load. If this
        value is set to false no configuration file will be loaded.
    :param max_in_flight: Upper bound of concurrent remote requests, for
        example ``4``.
    :param embedding_cache_dir: A directory to cache embeddings in.
    """
    global __config
    __config = load_config(
        config_file=config_file,
        max_in_flight=max_in_flight,
        embedding_cache_dir=embedding_cache_dir,
    )
    set_max_in_flight(__config.max_in_flight)
    return __config


def get_default_config() -> Config:
    """
    Get the default configuration.

    If :func:`set_default_config` was not called before, the configuration
    is loaded from the configuration files in the following order:

    1. The file path in the environment variable ``LEGALQA_CONFIG_FILE``.
    2. The configuration file ``.legalqa.yml`` in the current working directory.
    3. The configuration file at ``/etc/legalqa/config.yml``.

    .. code-block:: yaml

        ---
        max_in_flight: 4
        generation_providers:
          davinci:
            endpoint: https://llm-gateway.example.com/v1/generate
            model: text-davinci-003
            token_budget: 4097
            auth_env: OPENAI_API_KEY
    """
    global __config
    if not __config:
        __config = set_default_config()
    return __config
