"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: missing inputs exit 2,
validation failures exit 3, numeric aborts exit 4.
"""

from __future__ import annotations


class MissingInputError(FileNotFoundError):
    """A required input file or requested date is absent."""


class ValidationError(ValueError):
    """Config, schema, or data validation failed; message names the field."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values and aborted."""
