from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
import pandas as pd
from langsmith import traceable

from ..errors import InferenceError, NoEventsError
from .cohort import Cohort

log = logging.getLogger(__name__)

RiskKind = Literal["death", "first_event"]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function of age.

    `values[k]` holds on [knots[k], knots[k+1]); `value_before_first` holds
    before the first knot. Left limits are found by strict knot search.
    """
    knots: np.ndarray
    values: np.ndarray
    value_before_first: float = 0.0

    def __post_init__(self):
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        if knots.shape != values.shape:
            raise ValueError(f"knots/values length mismatch: {knots.size} vs {values.size}")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "value_before_first", float(self.value_before_first))

    @classmethod
    def constant(cls, value: float) -> "StepCurve":
        return cls(np.empty(0), np.empty(0), value)

    def __len__(self) -> int:
        return int(self.knots.size)

    def _lookup(self, idx: np.ndarray) -> np.ndarray:
        padded = np.concatenate(([self.value_before_first], self.values))
        return padded[idx + 1]

    def __call__(self, t):
        """Value at t (right-continuous)."""
        t_arr = np.asarray(t, dtype=float)
        out = self._lookup(np.searchsorted(self.knots, t_arr, side="right") - 1)
        return float(out) if out.ndim == 0 else out

    def at_minus(self, t):
        """Left limit just before t."""
        t_arr = np.asarray(t, dtype=float)
        out = self._lookup(np.searchsorted(self.knots, t_arr, side="left") - 1)
        return float(out) if out.ndim == 0 else out

    def jumps(self) -> np.ndarray:
        return np.diff(np.concatenate(([self.value_before_first], self.values)))

    @property
    def last_value(self) -> float:
        return float(self.values[-1]) if self.values.size else self.value_before_first

    def is_nonincreasing(self, atol: float = 0.0) -> bool:
        return bool(np.all(self.jumps() <= atol))

    def is_nondecreasing(self, atol: float = 0.0) -> bool:
        return bool(np.all(self.jumps() >= -atol))

    def compress(self) -> "StepCurve":
        """Drop knots where the value does not change."""
        keep = self.jumps() != 0
        return StepCurve(self.knots[keep], self.values[keep], self.value_before_first)

    def restrict(self, upper: float) -> "StepCurve":
        keep = self.knots <= upper
        return StepCurve(self.knots[keep], self.values[keep], self.value_before_first)

    def combine(self, other: "StepCurve", op: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "StepCurve":
        """Apply a pointwise binary op on the merged knot set."""
        knots = np.union1d(self.knots, other.knots)
        return StepCurve(
            knots,
            op(self(knots), other(knots)),
            float(op(np.asarray(self.value_before_first), np.asarray(other.value_before_first))),
        )

    def to_frame(self, column: str = "value") -> pd.DataFrame:
        ages = self.knots
        values = self.values
        if ages.size == 0 or ages[0] > 0:
            ages = np.concatenate(([0.0], ages))
            values = np.concatenate(([self.value_before_first], values))
        return pd.DataFrame({"age": ages, column: values})


@dataclass(frozen=True)
class RiskSetTable:
    """Delayed-entry risk set of one event process.

    `entry`/`exit` are the sorted closed at-risk intervals [R_i, exit_i] of
    the n members; `ages` are the distinct observed event ages with their
    risk and event counts. For the first-event process `cause_events` counts
    disease onsets at each age.
    """
    kind: str
    n: int
    entry: np.ndarray
    exit: np.ndarray
    ages: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    cause_events: Optional[np.ndarray] = field(default=None)

    def risk_count(self, t):
        """Number of members with entry <= t <= exit."""
        t_arr = np.asarray(t, dtype=float)
        out = np.searchsorted(self.entry, t_arr, side="right") - np.searchsorted(self.exit, t_arr, side="left")
        return int(out) if out.ndim == 0 else out

    def risk_proportion(self, t, denominator: Optional[int] = None):
        return self.risk_count(t) / float(denominator or self.n)

    @property
    def has_events(self) -> bool:
        return self.ages.size > 0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"age": self.ages, "at_risk": self.at_risk, "events": self.events})
        if self.cause_events is not None:
            frame["cause_events"] = self.cause_events
        return frame


@traceable(name="km.risk_process", run_type="tool")
def risk_process(c: Cohort, kind: RiskKind = "death", allow_empty: bool = False) -> RiskSetTable:
    """Risk/event counts over distinct event ages of the death or first-event process.

    death: every subject, at risk on [R_i, V2_i], events delta2 at V2.
    first_event: only subjects disease-free at recruitment, at risk on
    [R_i, V1_i], events max(delta1, delta2) at V1.
    """
    if kind == "death":
        entry, exit_, event = c.r, c.v2, c.delta2 == 1
        cause = None
    elif kind == "first_event":
        member = c.disease_free_at_entry
        entry, exit_ = c.r[member], c.v1[member]
        event = c.first_event[member] == 1
        cause = c.delta1[member] == 1
    else:
        raise ValueError(f"unknown risk process kind {kind!r}")

    n = int(entry.size)
    if n == 0:
        raise NoEventsError(f"no subjects in the {kind} risk process")
    ages, events = np.unique(exit_[event], return_counts=True)
    if ages.size == 0 and not allow_empty:
        raise NoEventsError(f"no {kind} events observed")

    table_entry = np.sort(entry)
    table_exit = np.sort(exit_)
    at_risk = np.searchsorted(table_entry, ages, side="right") - np.searchsorted(table_exit, ages, side="left")
    cause_events = None
    if cause is not None:
        onsets = np.sort(exit_[cause])
        cause_events = np.searchsorted(onsets, ages, side="right") - np.searchsorted(onsets, ages, side="left")

    log.debug("[km] %s process: n=%d, %d event ages", kind, n, ages.size)
    return RiskSetTable(
        kind=kind,
        n=n,
        entry=_frozen(table_entry),
        exit=_frozen(table_exit),
        ages=_frozen(ages),
        at_risk=_frozen(at_risk, dtype=np.int64),
        events=_frozen(events, dtype=np.int64),
        cause_events=None if cause_events is None else _frozen(cause_events, dtype=np.int64),
    )


def km_left_truncated(table: RiskSetTable) -> StepCurve:
    """Product-limit survival with delayed-entry risk sets; equals 1 before the first event."""
    if not table.has_events:
        return StepCurve.constant(1.0)
    if np.any(table.at_risk < table.events) or np.any(table.at_risk <= 0):
        # every event age has its own subject at risk
        raise AssertionError("risk count below event count at an event age")
    factors = 1.0 - table.events / table.at_risk
    return StepCurve(table.ages, np.cumprod(factors), 1.0)


@dataclass(frozen=True)
class KHat:
    """K(v) = S2(v-) / Ybar2(v), the delayed-entry weight for a death at age v."""
    survival: StepCurve
    table: RiskSetTable

    def risk_proportion(self, v):
        return self.table.risk_proportion(v)

    def __call__(self, v):
        v_arr = np.asarray(v, dtype=float)
        count = np.asarray(self.table.risk_count(v_arr))
        if np.any(count == 0):
            bad = np.atleast_1d(v_arr)[np.atleast_1d(count) == 0]
            raise InferenceError(f"K undefined at age(s) with empty risk set: {bad[:5].tolist()}")
        out = np.asarray(self.survival.at_minus(v_arr)) * self.table.n / count
        return float(out) if out.ndim == 0 else out


@traceable(name="km.khat", run_type="tool")
def khat(c: Cohort) -> KHat:
    table = risk_process(c, "death", allow_empty=True)
    return KHat(km_left_truncated(table), table)
