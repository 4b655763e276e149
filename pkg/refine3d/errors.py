"""
Error types shared across refine3d.

Every error carries the process exit code the CLI reports for it. Each class also
inherits the closest built-in exception so callers can catch ValueError / RuntimeError.
"""
from typing import Optional


class Refine3DError(Exception):
    exit_code = 1


class DimensionError(Refine3DError, ValueError):
    """Shapes or spatial extents that an operation cannot accept"""
    exit_code = 2


class EmptySetError(Refine3DError, ValueError):
    exit_code = 2


class GraphError(Refine3DError, RuntimeError):
    """Misuse of the recorded graph (double backward, non-scalar loss)"""


class ConfigError(Refine3DError, ValueError):
    exit_code = 2


class FormatError(Refine3DError, ValueError):
    """Malformed file content. `offset` is a byte offset, `row` a CSV row number."""
    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None, row: Optional[int] = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.offset = offset
        self.row = row


class PhaseOrderError(Refine3DError, RuntimeError):
    exit_code = 3


class NumericError(Refine3DError, ArithmeticError):
    exit_code = 4
