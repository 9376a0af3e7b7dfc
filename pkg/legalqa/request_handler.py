"""
Provides the base class :class:`RequestHandler` that is inherited by the
remote providers, for example the remote embedding provider posts
``{model, input}`` and the remote generation provider posts
``{model, prompt, max_output_tokens, temperature}``.
"""

import os
import threading
import time
from collections.abc import Callable
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as get_version
from typing import Any, Optional

import requests
from pydantic.dataclasses import dataclass

from legalqa.exceptions import (
    LegalqaProviderUnconfiguredException,
    LegalqaRequestException,
    LegalqaTransportException,
)
from legalqa.log import logger

Payload = dict[str, Any]

_in_flight = threading.BoundedSemaphore(4)


def set_max_in_flight(max_in_flight: int) -> None:
    """Bound the number of concurrent remote requests of the whole process."""
    global _in_flight
    _in_flight = threading.BoundedSemaphore(max_in_flight)


def get_in_flight_semaphore() -> threading.BoundedSemaphore:
    return _in_flight


def _get_package_version() -> str:
    try:
        return get_version("legalqa")
    except PackageNotFoundError:
        return "0"


@dataclass
class Response:
    payload: Any
    """The decoded JSON body."""

    attempts: int
    """How many attempts were needed."""


class RequestHandler:
    """
    Handles the HTTP requests to a remote provider.
    """

    provider_name: str

    endpoint: Optional[str]

    auth_env: Optional[str]

    timeout: float

    max_attempts: int

    backoff_base: float

    session_factory: Callable[[], requests.Session] = requests.Session

    sleep: Callable[[float], None] = time.sleep

    def __init__(
        self,
        name: str,
        endpoint: Optional[str],
        auth_env: Optional[str] = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
    ) -> None:
        self.provider_name = name
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base

    def __create_session(self) -> requests.Session:
        session = self.session_factory()
        session.headers.update(
            {
                "User-Agent": f"Python-legalqa/{_get_package_version()}",
                "Accept": "application/json",
                "Content-Type": "application/json",
            }
        )
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token:
                session.headers["Authorization"] = f"Bearer {token}"
            else:
                logger.warning(
                    "Provider %s: environment variable %s is not set",
                    self.provider_name,
                    self.auth_env,
                )
        return session

    def _request(self, payload: Payload) -> Response:
        """
        Post the payload and return the decoded body.

        Transport faults, ``429`` and ``5xx`` responses are retried with
        exponential backoff. Other non ``2xx`` responses raise immediately.

        :param payload: The JSON payload to send.
        """
        if not self.endpoint:
            raise LegalqaProviderUnconfiguredException(
                f"Provider {self.provider_name} has no endpoint configured!"
            )

        last_error = ""
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                delay = self.backoff_base * 2 ** (attempt - 2)
                logger.debug(
                    "Provider %s: retry %s after %ss (%s)",
                    self.provider_name,
                    attempt,
                    delay,
                    last_error,
                )
                self.sleep(delay)
            session = self.__create_session()
            try:
                with get_in_flight_semaphore():
                    logger.verbose("POST %s attempt %s", self.endpoint, attempt)
                    response = session.post(
                        self.endpoint, json=payload, timeout=self.timeout
                    )
            except requests.RequestException as e:
                last_error = f"{e.__class__.__name__}: {e}"
                continue
            finally:
                session.close()

            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"status {response.status_code}"
                continue

            if not 200 <= response.status_code <= 299:
                raise LegalqaRequestException(
                    f'Request "{self.endpoint}" failed with status {response.status_code}: {response.text}',
                    _decode_or_text(response),
                )

            try:
                return Response(payload=response.json(), attempts=attempt)
            except ValueError:
                raise LegalqaRequestException(
                    f'Request "{self.endpoint}" returned no JSON body: {response.text}',
                    response.text,
                )

        raise LegalqaTransportException(
            f"Provider {self.provider_name} unreachable after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
        )


def _decode_or_text(response: requests.Response) -> Any:
    try:
        return response.json()
    except ValueError:
        return response.text
