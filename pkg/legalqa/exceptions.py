"""
legalqa exceptions

The command line interface maps every exception class to exactly one exit
code, see :func:`get_exit_code`.
"""

from typing import Any, Optional


class LegalqaException(Exception):
    """
    Base class of all legalqa exceptions.
    """


class LegalqaPreconditionException(LegalqaException):
    """
    An operation was called with arguments that violate its precondition,
    for example an empty question or a zero vector.
    """


class LegalqaDataException(LegalqaException):
    """
    Input data is malformed, inconsistent or missing.
    """

    line_number: Optional[int] = None

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super(LegalqaDataException, self).__init__(message)
        self.line_number = line_number


class LegalqaConfigException(LegalqaException):
    """
    The configuration or a run configuration is invalid.
    """


class LegalqaProviderException(LegalqaException):
    """
    An embedding or generation provider failed.
    """


class LegalqaProviderUnconfiguredException(LegalqaProviderException):
    """
    A provider is unknown or has no endpoint configured.
    """


class LegalqaTransportException(LegalqaProviderException):
    """
    The provider could not be reached, all retry attempts are exhausted.
    """

    attempts: int = 0

    def __init__(self, message: str, attempts: int) -> None:
        super(LegalqaTransportException, self).__init__(message)
        self.attempts = attempts


class LegalqaRequestException(LegalqaProviderException):
    """
    The provider answered with an error status or an unusable payload.
    """

    response: Any = None

    def __init__(self, message: str, response: Any = None) -> None:
        super(LegalqaRequestException, self).__init__(message)
        self.response = response


class LegalqaSpanException(LegalqaProviderException):
    """
    An extractive provider returned an invalid span.
    """


EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


def get_exit_code(exception: BaseException) -> int:
    """
    :returns: ``3`` for provider and transport errors, ``2`` for every other
        legalqa error.
    """
    if isinstance(exception, LegalqaProviderException):
        return EXIT_PROVIDER
    return EXIT_DATA
