"""
Error hierarchy for the targeting pipeline.
The CLI maps ArgumentError to exit code 2 and every other CpbError to 1.
"""

from typing import Optional


class CpbError(Exception):
    """Base class. `module` names the pipeline stage that failed."""

    module = "benefit"

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        if module:
            self.module = module


class ArgumentError(CpbError, ValueError):
    """Invalid parameter, grid or flag combination."""


class SchemaError(CpbError):
    """Named column missing from the input or from a cohort."""

    module = "dataset"


class ParseError(CpbError):
    """Malformed cell. `row` is the 1-based data row (header excluded)."""

    module = "dataset"

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class PositivityError(CpbError):
    """A treatment arm is empty in the data or in a training complement."""

    def __init__(self, message: str, fold: Optional[int] = None, module: Optional[str] = None):
        super().__init__(message, module=module)
        self.fold = fold


class NumericError(CpbError):
    """Singular design, invalid propensity, non-finite intermediate."""
