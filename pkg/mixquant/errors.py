"""Error hierarchy shared by every component.

The three top-level classes map onto CLI exit codes:
  - UsageError : 1 (caller broke a precondition or passed bad flags)
  - DataError  : 2 (inputs are malformed, missing or inconsistent)
  - anything else escaping the pipeline is internal: 3
"""

from __future__ import annotations


class MixQuantError(Exception):
    exit_code: int = 3


class UsageError(MixQuantError, ValueError):
    exit_code = 1


class DataError(MixQuantError):
    exit_code = 2


class ModelLoadError(DataError):
    """A model directory could not be read back."""


class QuantizationError(DataError):
    """A quantization group could not be quantized."""

    def __init__(self, message: str, *, row: int | None = None, group: int | None = None) -> None:
        location = ""
        if row is not None and group is not None:
            location = f" (row {row}, group {group})"
        super().__init__(f"{message}{location}")
        self.row = row
        self.group = group


class AssignmentError(DataError):
    """A precision assignment does not match the layers it is applied to."""
