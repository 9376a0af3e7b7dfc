"""
Logging of the pipeline stages on standard error.

The command line option ``-d`` raises the verbosity up to three times:

1. ``-d``: info, one line per stage and per failed question
2. ``-dd``: debug, one line per answered question and per retry
3. ``-ddd``: verbose, prompts, requests and retrieved chunk ids

Warnings are always shown.
"""

import time
from collections.abc import Iterator
from contextlib import contextmanager
from logging import DEBUG, INFO, WARNING, Formatter, StreamHandler, addLevelName, getLogger
from typing import NamedTuple

VERBOSE = 5

addLevelName(VERBOSE, "VERBOSE")


class _Level(NamedTuple):
    name: str

    level: int

    color: str

    flag: str


_RESET = "\x1b[0m"

_levels: dict[int, _Level] = {
    1: _Level("info", INFO, "\x1b[0;34m", "-d"),
    2: _Level("debug", DEBUG, "\x1b[0;35m", "-dd"),
    3: _Level("verbose", VERBOSE, "\x1b[0;36m", "-ddd"),
}

_warning = _Level("warning", WARNING, "\x1b[0;33m", "")


class Logger:
    """Colours the arguments of each message by level, the format string
    stays plain so that grepping the log for a message works."""

    def __init__(self, name: str = "legalqa") -> None:
        self.__logger = getLogger(name)
        if not self.__logger.handlers:
            handler = StreamHandler()
            handler.setFormatter(Formatter("%(message)s"))
            self.__logger.addHandler(handler)
        self.__logger.setLevel(WARNING)

    def set_level(self, verbosity: int) -> None:
        """
        :param verbosity: The number of ``-d`` flags, values above ``3``
            are treated as ``3``.
        """
        if verbosity <= 0:
            self.__logger.setLevel(WARNING)
        else:
            self.__logger.setLevel(_levels[min(verbosity, 3)].level)

    def __log(self, level: _Level, msg: str, *args: object) -> None:
        if not self.__logger.isEnabledFor(level.level):
            return
        self.__logger.log(
            level.level, msg, *(f"{level.color}{arg}{_RESET}" for arg in args)
        )

    def warning(self, msg: str, *args: object) -> None:
        self.__log(_warning, msg, *args)

    def info(self, msg: str, *args: object) -> None:
        """Log on verbosity ``1``: ``-d``.

        :param msg: A message format string.
        :param args: The arguments which are merged into ``msg`` using the
            string formatting operator.
        """
        self.__log(_levels[1], msg, *args)

    def debug(self, msg: str, *args: object) -> None:
        self.__log(_levels[2], msg, *args)

    def verbose(self, msg: str, *args: object) -> None:
        self.__log(_levels[3], msg, *args)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Log the start and the duration of a pipeline stage on info level."""
        self.info("%s: started", name)
        start = time.perf_counter()
        yield
        self.info("%s: done in %ss", name, f"{time.perf_counter() - start:.2f}")

    def show_levels(self) -> None:
        for verbosity, level in _levels.items():
            self.__log(
                level, "log level %s (%s): %s", verbosity, level.name, level.flag
            )


logger = Logger()
