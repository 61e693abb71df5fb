"""Exporter failures, split by the exit code they should map to."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class MissingInput(ExportError):
    """A file, directory, or model that should exist does not (exit 2)."""


class InvalidInput(ExportError):
    """Well-located but malformed or out-of-range input (exit 3)."""
