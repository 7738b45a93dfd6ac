# -*- encoding: utf-8 -*-

from dataclasses import dataclass
from typing import Optional


class FaultwaveError(Exception):
    """Base class for all the errors raised by this package

    The field `exit_code` is the value returned to the shell when the error reaches
    the command-line interface."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(FaultwaveError):
    """A configuration does not make sense (e.g., an empty plan or a Nyquist violation)"""

    exit_code = 1


@dataclass
class SourceLocation:
    """A specific position in a configuration file

    This class has the following fields:
    - file_name: the name of the file, or the empty string if the configuration was provided as a memory stream
    - line_num: number of the line (starting from 1)
    - col_num: number of the column (starting from 1)
    """
    file_name: str = ""
    line_num: int = 0
    col_num: int = 0

    def __str__(self) -> str:
        return f"{self.file_name}:{self.line_num}:{self.col_num}"


class ConfigFileError(ConfigurationError):
    """A syntax or semantic error found while reading a configuration file"""

    def __init__(self, location: SourceLocation, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location
        self.message = message


class DomainError(FaultwaveError):
    """A numeric operation was called with arguments outside its domain"""

    exit_code = 3


class NumericError(FaultwaveError):
    """A NaN or an infinite value has been produced during a computation"""

    exit_code = 3


class ParseError(FaultwaveError):
    """A file on disk does not follow the expected format

    The field `offset` is the byte offset (for binary files) or the line number (for text files)
    where the problem was detected, if known."""

    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
