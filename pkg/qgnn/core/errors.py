"""
Shared error base.

Each service module defines its own exceptions next to the code that raises
them; they all derive from QgnnError so the CLI can map them to exit codes.
"""


class QgnnError(Exception):
    """Base class for every domain error raised by qgnn."""

    exit_code = 1


class ConfigurationError(QgnnError):
    """Raised for invalid settings, task configs or unsupported options."""

    exit_code = 1


class VerificationError(QgnnError):
    """Raised when a query or template fails verification."""

    exit_code = 2


class DataMismatchError(QgnnError):
    """Raised when data, encodings and stores disagree."""

    exit_code = 3


class StorageIOError(QgnnError):
    """Raised when a file cannot be read or written."""

    exit_code = 4
