from __future__ import annotations

import logging
from enum import Enum
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import CohortValidationError, EmptyCohortError, Rejection

log = logging.getLogger(__name__)

# Column order of the cohort CSV and of raw 5-tuples.
RECORD_FIELDS = ("v1", "v2", "delta1", "delta2", "r")


class StudyDesign(BaseModel):
    """Recruitment window [c_lower, c_upper] and maximum analysis age tau (years)."""
    model_config = ConfigDict(frozen=True)

    c_lower: float = Field(gt=0)
    c_upper: float
    tau: float

    @model_validator(mode="after")
    def _ordered(self) -> "StudyDesign":
        if not (self.c_lower <= self.c_upper < self.tau):
            raise ValueError(
                f"need 0 < c_lower <= c_upper < tau, got ({self.c_lower}, {self.c_upper}, {self.tau})"
            )
        return self


class SubjectClass(str, Enum):
    PREVALENT = "prevalent"
    INCIDENT = "incident"
    DIED_DISEASE_FREE = "died_disease_free"
    ALIVE_DISEASE_FREE = "alive_disease_free"


class SubjectRecord(BaseModel):
    """Observed tuple (V1, V2, delta1, delta2, R) of one cohort member."""
    model_config = ConfigDict(frozen=True)

    v1: float
    v2: float
    delta1: Literal[0, 1]
    delta2: Literal[0, 1]
    r: float

    @model_validator(mode="after")
    def _consistent(self) -> "SubjectRecord":
        if not (0 < self.v1 <= self.v2):
            raise ValueError("need 0 < v1 <= v2")
        if self.delta1 == 0 and self.v1 != self.v2:
            raise ValueError("delta1 = 0 requires v1 = v2")
        if self.r > self.v2:
            raise ValueError("recruitment age after exit (r > v2)")
        return self

    @property
    def is_prevalent(self) -> bool:
        return self.delta1 == 1 and self.v1 < self.r


class Cohort:
    """Immutable column store of validated subjects plus the study design.

    Columns are read-only numpy arrays in input order. Build through
    `validate_cohort`, `Cohort.from_records` or `Cohort.from_arrays`.
    """

    __slots__ = ("v1", "v2", "delta1", "delta2", "r", "ids", "design")

    def __init__(
        self,
        v1: np.ndarray,
        v2: np.ndarray,
        delta1: np.ndarray,
        delta2: np.ndarray,
        r: np.ndarray,
        design: StudyDesign,
        ids: Optional[np.ndarray] = None,
    ):
        cols = {
            "v1": np.asarray(v1, dtype=float),
            "v2": np.asarray(v2, dtype=float),
            "delta1": np.asarray(delta1, dtype=np.int8),
            "delta2": np.asarray(delta2, dtype=np.int8),
            "r": np.asarray(r, dtype=float),
        }
        n = cols["v1"].shape[0]
        if n == 0:
            raise EmptyCohortError("cohort is empty")
        if any(a.shape != (n,) for a in cols.values()):
            raise ValueError("cohort columns must be 1-d arrays of equal length")
        if ids is None:
            ids = np.arange(1, n + 1)
        ids = np.asarray(ids)
        for name, arr in list(cols.items()) + [("ids", ids)]:
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "design", design)

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("Cohort is immutable")

    @classmethod
    def from_arrays(cls, v1, v2, delta1, delta2, r, design: StudyDesign, ids=None) -> "Cohort":
        """Validate column arrays and build a cohort (strict reject)."""
        frame = pd.DataFrame({"v1": v1, "v2": v2, "delta1": delta1, "delta2": delta2, "r": r})
        if ids is not None:
            frame.insert(0, "id", ids)
        return validate_cohort(frame, design)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], design: StudyDesign) -> "Cohort":
        rows = [(s.v1, s.v2, s.delta1, s.delta2, s.r) for s in records]
        return validate_cohort(rows, design)

    def __len__(self) -> int:
        return int(self.v1.shape[0])

    def __repr__(self) -> str:
        return f"Cohort(n={len(self)}, design={self.design!r})"

    @property
    def n(self) -> int:
        return len(self)

    @property
    def subjects(self) -> List[SubjectRecord]:
        return [
            SubjectRecord(v1=a, v2=b, delta1=int(c), delta2=int(d), r=e)
            for a, b, c, d, e in zip(
                self.v1.tolist(), self.v2.tolist(), self.delta1.tolist(), self.delta2.tolist(), self.r.tolist()
            )
        ]

    @property
    def prevalent(self) -> np.ndarray:
        """Diseased before recruitment (delta1 = 1 and v1 < r)."""
        return (self.delta1 == 1) & (self.v1 < self.r)

    @property
    def disease_free_at_entry(self) -> np.ndarray:
        """Membership xi_i in the Aalen-Johansen subsample (first event not before recruitment)."""
        return ~self.prevalent

    @property
    def first_event(self) -> np.ndarray:
        """delta*_i: the first transition (disease or death) was observed."""
        return ((self.delta1 == 1) | (self.delta2 == 1)).astype(np.int8)

    def subset(self, mask: np.ndarray) -> "Cohort":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise EmptyCohortError("subset selects no subjects")
        return Cohort(
            self.v1[mask], self.v2[mask], self.delta1[mask], self.delta2[mask], self.r[mask],
            self.design, ids=self.ids[mask],
        )

    def take(self, order: np.ndarray) -> "Cohort":
        """Reorder subjects (used for permutation checks)."""
        order = np.asarray(order)
        return Cohort(
            self.v1[order], self.v2[order], self.delta1[order], self.delta2[order], self.r[order],
            self.design, ids=self.ids[order],
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": self.ids,
            "v1": self.v1,
            "v2": self.v2,
            "delta1": self.delta1.astype(int),
            "delta2": self.delta2.astype(int),
            "r": self.r,
        })


RawRecords = Union[pd.DataFrame, Iterable[Sequence[Any]]]


def _as_frame(raw_records: RawRecords) -> pd.DataFrame:
    if isinstance(raw_records, pd.DataFrame):
        frame = raw_records.copy()
        missing = [c for c in RECORD_FIELDS if c not in frame.columns]
        if missing:
            raise ValueError(f"missing column(s): {', '.join(missing)}")
        return frame.reset_index(drop=True)
    rows = [list(rec) for rec in raw_records]
    bad_width = [i for i, rec in enumerate(rows) if len(rec) != len(RECORD_FIELDS)]
    if bad_width:
        raise CohortValidationError(
            [Rejection(i, "record", f"expected {len(RECORD_FIELDS)} fields, got {len(rows[i])}") for i in bad_width]
        )
    return pd.DataFrame(rows, columns=list(RECORD_FIELDS))


@traceable(name="cohort.validate", run_type="tool")
def validate_cohort(raw_records: RawRecords, design: StudyDesign) -> Cohort:
    """Check raw rows against the subject invariants and the recruitment window.

    Accepts a DataFrame with columns v1, v2, delta1, delta2, r (and optional id)
    or an iterable of 5-tuples in that order. Every violated rule of every row is
    collected; any rejection raises CohortValidationError carrying the full
    report. No row is ever repaired.
    """
    frame = _as_frame(raw_records)
    if frame.empty:
        raise EmptyCohortError("no records in input")

    rejections: List[Rejection] = []
    numeric: Dict[str, pd.Series] = {}
    ok = pd.Series(True, index=frame.index)
    for name in RECORD_FIELDS:
        raw = frame[name]
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() | ~np.isfinite(values.astype(float).fillna(0.0))
        for i in np.flatnonzero(bad.to_numpy()):
            rejections.append(Rejection(int(i), name, f"non-numeric value {raw.iloc[i]!r}"))
        ok &= ~bad
        numeric[name] = values.astype(float)

    v1, v2, d1, d2, r = (numeric[k] for k in RECORD_FIELDS)
    rules = [
        ("delta1", ~d1.isin([0.0, 1.0]), "delta1 must be 0 or 1"),
        ("delta2", ~d2.isin([0.0, 1.0]), "delta2 must be 0 or 1"),
        ("v1", ~(v1 > 0), "v1 must be positive"),
        ("v1", v1 > v2, "v1 > v2"),
        ("v1", (d1 == 0) & (v1 != v2), "delta1 = 0 requires v1 = v2"),
        ("r", r > v2, "r > v2 (not alive and uncensored at recruitment)"),
        ("r", (r < design.c_lower) | (r > design.c_upper),
         f"r outside recruitment window [{design.c_lower:g}, {design.c_upper:g}]"),
    ]
    for field, violated, rule in rules:
        # rows with a non-numeric field are reported once, above
        violated = violated & ok
        for i in np.flatnonzero(violated.to_numpy()):
            rejections.append(Rejection(int(i), field, rule))

    if rejections:
        rejections.sort(key=lambda rej: rej.row)
        log.warning("[cohort] %d rejection(s) over %d row(s)", len(rejections), len(frame))
        raise CohortValidationError(rejections)

    ids = frame["id"].to_numpy() if "id" in frame.columns else None
    cohort = Cohort(
        v1.to_numpy(), v2.to_numpy(), d1.to_numpy().astype(np.int8), d2.to_numpy().astype(np.int8),
        r.to_numpy(), design, ids=ids,
    )
    log.debug("[cohort] accepted %d subjects", len(cohort))
    return cohort


def classify_subject(s: SubjectRecord) -> SubjectClass:
    if s.delta1 == 1:
        return SubjectClass.PREVALENT if s.v1 < s.r else SubjectClass.INCIDENT
    return SubjectClass.DIED_DISEASE_FREE if s.delta2 == 1 else SubjectClass.ALIVE_DISEASE_FREE


def classify(c: Cohort) -> np.ndarray:
    """Vectorised classify_subject over a cohort (object array of SubjectClass values)."""
    out = np.where(
        c.delta1 == 1,
        np.where(c.v1 < c.r, SubjectClass.PREVALENT.value, SubjectClass.INCIDENT.value),
        np.where(c.delta2 == 1, SubjectClass.DIED_DISEASE_FREE.value, SubjectClass.ALIVE_DISEASE_FREE.value),
    )
    return out


def class_counts(c: Cohort) -> Dict[str, int]:
    labels = classify(c)
    return {k.value: int(np.count_nonzero(labels == k.value)) for k in SubjectClass}


def restrict_t1_after(c: Cohort, threshold: float) -> Cohort:
    """Drop subjects whose observed disease onset precedes `threshold`."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    keep = ~((c.delta1 == 1) & (c.v1 < threshold))
    if not keep.any():
        raise EmptyCohortError(f"no subjects left after restricting onsets to >= {threshold:g}")
    if keep.all():
        return c
    log.debug("[cohort] restrict_t1_after(%g) removed %d subjects", threshold, int((~keep).sum()))
    return c.subset(keep)


def cohort_summary(c: Cohort) -> Dict[str, Optional[float]]:
    """Sample-size table: vital status by disease status, prevalent split at c_lower, onset minima."""
    diseased = c.delta1 == 1
    died = c.delta2 == 1
    prevalent = c.prevalent
    incident = diseased & ~prevalent
    below = prevalent & (c.v1 < c.design.c_lower)

    def _min(mask: np.ndarray) -> Optional[float]:
        return float(c.v1[mask].min()) if mask.any() else None

    return {
        "n": len(c),
        "alive_without_disease": int(np.count_nonzero(~diseased & ~died)),
        "died_without_disease": int(np.count_nonzero(~diseased & died)),
        "alive_with_disease": int(np.count_nonzero(diseased & ~died)),
        "died_with_disease": int(np.count_nonzero(diseased & died)),
        "prevalent_below_c_lower": int(np.count_nonzero(below)),
        "prevalent_at_or_above_c_lower": int(np.count_nonzero(prevalent & ~below)),
        "incident": int(np.count_nonzero(incident)),
        "min_onset_prevalent": _min(prevalent),
        "min_onset_incident": _min(incident),
    }
