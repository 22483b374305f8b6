from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict

import numpy as np
from langsmith import traceable

from ..errors import EmptyCohortError, EstimandMismatchError, InferenceError
from .cohort import Cohort, StudyDesign
from .km import StepCurve, khat, km_left_truncated, risk_process

log = logging.getLogger(__name__)


class EstimandTag(str, Enum):
    AJ_CONDITIONAL = "aj_conditional"      # G1(t | T1 >= c_L, T2 >= c_L)
    NEW_CONDITIONAL = "new_conditional"    # G1(t | T2 >= c_L)
    COMBINED = "combined"


@dataclass(frozen=True)
class CifEstimate:
    estimator: str
    curve: StepCurve
    estimand_tag: EstimandTag
    n_used: int
    n_prevalent_used: int
    design: StudyDesign

    def __call__(self, t):
        return self.curve(t)

    def mass_below(self, age: float) -> float:
        return float(self.curve.at_minus(age))

    def header(self) -> dict:
        return {
            "estimator": self.estimator,
            "estimand_tag": self.estimand_tag.value,
            "n_used": self.n_used,
            "n_prevalent_used": self.n_prevalent_used,
        }


def _cif_from_jumps(ages: np.ndarray, heights: np.ndarray, tau: float) -> StepCurve:
    """Nondecreasing step curve from (possibly repeated) jump ages, cut at tau."""
    if ages.size == 0:
        return StepCurve.constant(0.0)
    knots, inverse = np.unique(ages, return_inverse=True)
    summed = np.bincount(inverse, weights=heights, minlength=knots.size)
    curve = StepCurve(knots, np.minimum(np.cumsum(summed), 1.0), 0.0)
    return curve.restrict(tau)


@traceable(name="estimators.aalen_johansen", run_type="tool")
def aalen_johansen(c: Cohort) -> CifEstimate:
    """Aalen-Johansen CIF with delayed entry on subjects disease-free at recruitment."""
    member = c.disease_free_at_entry
    if not member.any():
        raise EmptyCohortError("empty post-exclusion cohort: every subject is a prevalent case")

    table = risk_process(c, "first_event", allow_empty=True)
    first_survival = km_left_truncated(table)
    onset = table.cause_events if table.cause_events is not None else np.zeros(0, dtype=np.int64)
    hit = onset > 0
    if not hit.any():
        log.warning("[aj] no incident disease events; CIF is identically 0")
        curve = StepCurve.constant(0.0)
    else:
        ages = table.ages[hit]
        heights = first_survival.at_minus(ages) * onset[hit] / table.at_risk[hit]
        curve = _cif_from_jumps(ages, heights, c.design.tau)

    return CifEstimate(
        estimator="aj",
        curve=curve,
        estimand_tag=EstimandTag.AJ_CONDITIONAL,
        n_used=int(member.sum()),
        n_prevalent_used=0,
        design=c.design,
    )


@dataclass(frozen=True)
class ConditionalHazard:
    """Discrete hazard of onset age among subjects who died at age t2."""
    t2: float
    ages: np.ndarray
    increments: np.ndarray

    @property
    def survival(self) -> StepCurve:
        if self.ages.size == 0:
            return StepCurve.constant(1.0)
        return StepCurve(self.ages, np.cumprod(1.0 - self.increments), 1.0)


def _hazard_among(v1: np.ndarray, d1: np.ndarray, t2: float) -> ConditionalHazard:
    onsets = np.sort(v1[d1 == 1])
    ages, counts = np.unique(onsets, return_counts=True)
    if ages.size == 0:
        return ConditionalHazard(float(t2), ages, np.zeros(0))
    # at risk at t1: dead at t2 with V1 >= t1 (R <= t2 holds for all of them)
    v1_sorted = np.sort(v1)
    at_risk = v1_sorted.size - np.searchsorted(v1_sorted, ages, side="left")
    ok = at_risk > 0
    if not ok.all():
        log.warning("[tie] empty onset risk set at %d age(s) for t2=%g; skipped", int((~ok).sum()), t2)
    return ConditionalHazard(float(t2), ages[ok], counts[ok] / at_risk[ok])


def conditional_hazard(c: Cohort, t2: float) -> ConditionalHazard:
    """Onset hazard increments among deaths observed at exactly t2."""
    died_here = (c.delta2 == 1) & (c.v2 == t2)
    if not died_here.any():
        raise InferenceError(f"{t2:g} is not an observed death age")
    return _hazard_among(c.v1[died_here], c.delta1[died_here], t2)


@traceable(name="estimators.tie_general_cif", run_type="tool")
def tie_general_cif(c: Cohort) -> CifEstimate:
    """CIF as a sum over distinct death ages of P(T1 <= t | T2 = t2) * dF2(t2)."""
    table = risk_process(c, "death", allow_empty=True)
    death_survival = km_left_truncated(table)
    tag = dict(estimator="tie", estimand_tag=EstimandTag.NEW_CONDITIONAL, n_used=len(c),
               n_prevalent_used=int(c.prevalent.sum()), design=c.design)
    if not table.has_events:
        log.warning("[tie] no observed deaths; CIF is identically 0")
        return CifEstimate(curve=StepCurve.constant(0.0), **tag)

    d_f2 = death_survival.at_minus(table.ages) - death_survival(table.ages)
    joint = (c.delta1 == 1) & (c.delta2 == 1)
    knots = np.unique(c.v1[joint])
    if knots.size == 0:
        log.warning("[tie] no subject with both onset and death observed; CIF is identically 0")
        return CifEstimate(curve=StepCurve.constant(0.0), **tag)

    dead = c.delta2 == 1
    total = np.zeros(knots.size)
    for t2, weight in zip(table.ages, d_f2):
        if weight == 0:
            continue
        here = dead & (c.v2 == t2)
        if not (c.delta1[here] == 1).any():
            continue
        cond = _hazard_among(c.v1[here], c.delta1[here], t2).survival
        total += (1.0 - cond(knots)) * weight

    curve = StepCurve(knots, np.minimum(total, 1.0), 0.0).restrict(c.design.tau)
    return CifEstimate(curve=curve, **tag)


@traceable(name="estimators.new_cif", run_type="tool")
def new_cif(c: Cohort) -> CifEstimate:
    """CIF n^-1 sum delta1 delta2 I(V1 <= t) K(V2), prevalent cases included."""
    n = len(c)
    joint = (c.delta1 == 1) & (c.delta2 == 1)
    tag = dict(estimator="new", estimand_tag=EstimandTag.NEW_CONDITIONAL, n_used=n,
               n_prevalent_used=int(c.prevalent.sum()), design=c.design)
    if not joint.any():
        log.warning("[new] no subject with both onset and death observed; CIF is identically 0 (insufficient data)")
        return CifEstimate(curve=StepCurve.constant(0.0), **tag)

    weight = khat(c)
    # fixed summation order keeps the curve independent of row order
    order = np.lexsort((c.v2[joint], c.v1[joint]))
    v1 = c.v1[joint][order]
    k = np.asarray(weight(c.v2[joint][order]), dtype=float)
    exhausted = int(np.count_nonzero(k == 0))
    if exhausted:
        log.info("[new] %d death(s) after survival reached 0 contribute nothing", exhausted)
    curve = _cif_from_jumps(v1, k / n, c.design.tau)
    return CifEstimate(curve=curve, **tag)


@traceable(name="estimators.combination_cif", run_type="tool")
def combination_cif(aj: CifEstimate, new: CifEstimate, allow_estimand_mismatch: bool = False) -> CifEstimate:
    """Equal-weight average of the Aalen-Johansen and new estimates on the merged knots."""
    c_lower = new.design.c_lower
    below = new.mass_below(c_lower)
    if below > 0:
        msg = (f"new estimate has mass {below:.4g} below c_lower={c_lower:g}; "
               "Aalen-Johansen and new estimators target different estimands")
        if not allow_estimand_mismatch:
            raise EstimandMismatchError(msg)
        log.warning("[comb] %s (override accepted)", msg)
    curve = aj.curve.combine(new.curve, lambda a, b: 0.5 * a + 0.5 * b)
    return CifEstimate(
        estimator="comb",
        curve=curve,
        estimand_tag=EstimandTag.COMBINED,
        n_used=new.n_used,
        n_prevalent_used=new.n_prevalent_used,
        design=new.design,
    )


def check_prevalent_support(aj: CifEstimate, new: CifEstimate, ratio: float = 0.8) -> bool:
    """True (and a warning) when the new estimate at tau falls well below Aalen-Johansen."""
    tau = new.design.tau
    g_new, g_aj = float(new(tau)), float(aj(tau))
    if g_new < ratio * g_aj:
        log.warning(
            "[new] G(tau)=%.4f is below %.2f x Aalen-Johansen (%.4f): insufficient data for "
            "properly estimating the onset distribution given death age", g_new, ratio, g_aj,
        )
        return True
    return False


ESTIMATORS: Dict[str, Callable[[Cohort], CifEstimate]] = {
    "aj": aalen_johansen,
    "new": new_cif,
    "tie": tie_general_cif,
}
