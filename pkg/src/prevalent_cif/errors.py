from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional


class PrevalentCifError(Exception):
    """Base class for every error raised by this package."""


# Rejection.row for problems with the file or its header rather than a data row.
HEADER_ROW = -1


@dataclass(frozen=True)
class Rejection:
    """One rejected input row: 0-based data row index, offending field, violated rule."""
    row: int
    field: str
    rule: str

    def __str__(self) -> str:
        where = "header" if self.row == HEADER_ROW else f"row {self.row}"
        return f"{where}: {self.field}: {self.rule}"


class CohortValidationError(PrevalentCifError, ValueError):
    def __init__(self, rejections: List[Rejection], message: Optional[str] = None):
        self.rejections = list(rejections)
        if message is None:
            message = f"{len(self.rejections)} row(s) rejected"
            if self.rejections:
                message += f"; first: {self.rejections[0]}"
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.rejections, str(self)))

    def report_lines(self) -> List[str]:
        return [str(r) for r in self.rejections]


class EmptyCohortError(PrevalentCifError, ValueError):
    pass


class NoEventsError(PrevalentCifError, ValueError):
    pass


class EstimandMismatchError(PrevalentCifError, ValueError):
    pass


class InferenceError(PrevalentCifError, ValueError):
    pass


class ScenarioError(PrevalentCifError, ValueError):
    pass


class OracleError(PrevalentCifError, RuntimeError):
    pass


class ReplicationError(PrevalentCifError, RuntimeError):
    """A study replication failed; (rep_index, seed) replays it exactly."""

    def __init__(self, rep_index: int, seed: int, cause: BaseException):
        self.rep_index = rep_index
        self.seed = seed
        self.cause = cause
        super().__init__(f"replication {rep_index} failed (seed={seed}): {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (type(self), (self.rep_index, self.seed, self.cause))
