from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from langsmith import traceable
from scipy.stats import norm

from ..errors import EmptyCohortError, InferenceError
from .cohort import Cohort
from .estimators import CifEstimate
from .km import RiskSetTable, StepCurve, khat, km_left_truncated, risk_process

log = logging.getLogger(__name__)

BLOCK_ROWS = int(os.getenv("PREVALENT_CIF_BLOCK_ROWS", "2048"))


class TermsIncluded(str, Enum):
    MAIN_ONLY = "main_only"
    MAIN_PLUS_AUXILIARY = "main_plus_auxiliary"


class TransformKind(str, Enum):
    IDENTITY = "identity"
    LOG_COMPLEMENT = "log"
    ARCSINE_ROOT = "arcsine-root"


_TRANSFORM_ALIASES = {"none": "identity", "log-complement": "log", "arcsine": "arcsine-root"}


@dataclass(frozen=True)
class Transform:
    """Monotone map g of [0,1] used to build intervals on a better-behaved scale."""
    kind: TransformKind = TransformKind.IDENTITY

    @classmethod
    def parse(cls, name: "str | TransformKind | Transform") -> "Transform":
        if isinstance(name, Transform):
            return name
        key = str(getattr(name, "value", name)).strip().lower().replace("_", "-")
        key = _TRANSFORM_ALIASES.get(key, key)
        try:
            return cls(TransformKind(key))
        except ValueError:
            raise InferenceError(
                f"unknown transform {name!r}; choose from {', '.join(k.value for k in TransformKind)}"
            ) from None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def bounds(self) -> Tuple[float, float]:
        """Range of g over [0, 1]."""
        if self.kind is TransformKind.LOG_COMPLEMENT:
            return 0.0, math.inf
        if self.kind is TransformKind.ARCSINE_ROOT:
            return 0.0, math.pi / 2
        return 0.0, 1.0

    def forward(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is TransformKind.LOG_COMPLEMENT:
                return -np.log1p(-u)
            if self.kind is TransformKind.ARCSINE_ROOT:
                # same as pi/2 - arcsin(sqrt(1 - u))
                return np.arcsin(np.sqrt(np.clip(u, 0.0, 1.0)))
        return u

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is TransformKind.LOG_COMPLEMENT:
                return 1.0 / (1.0 - u)
            if self.kind is TransformKind.ARCSINE_ROOT:
                u = np.clip(u, 0.0, 1.0)
                return 1.0 / (2.0 * np.sqrt(u) * np.sqrt(1.0 - u))
        return np.ones_like(u)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is TransformKind.LOG_COMPLEMENT:
            return -np.expm1(-y)
        if self.kind is TransformKind.ARCSINE_ROOT:
            return np.sin(y) ** 2
        return y

    def interval(self, estimate, half_width_raw) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Back-transformed g(G) +/- half * g'(G); returns (lower, upper, degenerate)."""
        estimate = np.asarray(estimate, dtype=float)
        half = np.asarray(half_width_raw, dtype=float)
        lo_b, hi_b = self.bounds
        with np.errstate(invalid="ignore"):
            width = np.where(half == 0, 0.0, half * self.derivative(estimate))
        center = self.forward(estimate)
        lower = self.inverse(np.clip(center - width, lo_b, hi_b))
        upper = self.inverse(np.clip(center + width, lo_b, hi_b))
        degenerate = np.zeros(estimate.shape, dtype=bool)
        if self.kind is not TransformKind.IDENTITY:
            degenerate = estimate >= 1.0
            lower = np.where(degenerate, estimate, lower)
            upper = np.where(degenerate, estimate, upper)
        return np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0), degenerate


@dataclass(frozen=True)
class InfluenceMatrix:
    """Per-subject influence values (rows) on an age grid (columns).

    `main` is the centred plug-in term; `values` adds the auxiliary terms when
    they were requested. `estimate` is the point estimate on the grid.
    """
    estimator: str
    grid: np.ndarray
    estimate: np.ndarray
    main: np.ndarray
    values: np.ndarray
    terms_included: TermsIncluded

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def blend(self, other: "InfluenceMatrix", weight: float = 0.5, estimator: str = "comb") -> "InfluenceMatrix":
        if self.values.shape != other.values.shape or not np.array_equal(self.grid, other.grid):
            raise InferenceError("influence matrices differ in subjects or grid")
        w = float(weight)
        terms = self.terms_included if self.terms_included == other.terms_included else TermsIncluded.MAIN_ONLY
        return InfluenceMatrix(
            estimator=estimator,
            grid=self.grid,
            estimate=w * self.estimate + (1 - w) * other.estimate,
            main=w * self.main + (1 - w) * other.main,
            values=w * self.values + (1 - w) * other.values,
            terms_included=terms,
        )


def _check_grid(grid: Sequence[float], tau: float) -> np.ndarray:
    g = np.unique(np.asarray(grid, dtype=float))
    if g.size == 0 or not np.all(np.isfinite(g)):
        raise InferenceError("grid must be a nonempty set of finite ages")
    if g[-1] > tau:
        raise InferenceError(f"grid age {g[-1]:g} exceeds tau={tau:g}")
    return g


def _integrand_cumsum(table: RiskSetTable, survival: StepCurve, scale: int) -> np.ndarray:
    """Cumulative (S(u-)/S(u)) Ybar(u)^-2 dNbar(u) over the table's event ages, Ybar = y/scale."""
    s_minus = survival.at_minus(table.ages)
    s_now = survival(table.ages)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (s_minus / s_now) * scale * table.events / table.at_risk.astype(float) ** 2
    dead = s_now <= 0
    if dead.any():
        log.info("[inference] survival reaches 0 at %g; auxiliary integral truncated there", table.ages[dead][0])
        h = np.where(dead, 0.0, h)
    return np.cumsum(h)


def _step_lookup(ages: np.ndarray, cum: np.ndarray, x: np.ndarray, left: bool) -> np.ndarray:
    if cum.size == 0:
        return np.zeros(np.shape(x))
    idx = np.searchsorted(ages, x, side="left" if left else "right") - 1
    return np.where(idx >= 0, cum[np.maximum(idx, 0)], 0.0)


def _auxiliary_terms(
    entry: np.ndarray,
    exit_: np.ndarray,
    event: np.ndarray,
    table: RiskSetTable,
    survival: StepCurve,
    scale: int,
    targets: np.ndarray,
    weights: np.ndarray,
    block_rows: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Survival-estimation and risk-set-estimation terms, before their prefactors.

    For each subject i and target age v_j (a contributing event age):
      A_ij = event_i I(exit_i < v_j) / Ybar(exit_i) - int_{entry_i}^{exit_i ^ v_j-} (S-/S) Ybar^-2 dNbar
      B_ij = (I(entry_i <= v_j <= exit_i) - Ybar(v_j)) / Ybar(v_j)
    and the returned pair is (A @ weights, B @ weights).
    """
    cum = _integrand_cumsum(table, survival, scale)
    ybar_exit = table.risk_count(exit_) / float(scale)
    ybar_target = table.risk_count(targets) / float(scale)
    h_targets_minus = _step_lookup(table.ages, cum, targets, left=True)

    n_rows = entry.size
    out_a = np.zeros((n_rows, weights.shape[1]))
    out_b = np.zeros((n_rows, weights.shape[1]))
    for start in range(0, n_rows, block_rows):
        sl = slice(start, min(start + block_rows, n_rows))
        e_in, e_out, ev = entry[sl, None], exit_[sl, None], event[sl, None]
        before = e_out < targets[None, :]
        jump = np.where(before & (ev == 1), 1.0 / ybar_exit[sl, None], 0.0)
        upper = np.where(
            before,
            _step_lookup(table.ages, cum, exit_[sl], left=False)[:, None],
            h_targets_minus[None, :],
        )
        lower = _step_lookup(table.ages, cum, entry[sl], left=True)[:, None]
        # empty when entry_i is past the upper limit
        a = jump - np.maximum(upper - lower, 0.0)
        at_risk = (e_in <= targets[None, :]) & (targets[None, :] <= e_out)
        b = (at_risk - ybar_target[None, :]) / ybar_target[None, :]
        out_a[sl] = a @ weights
        out_b[sl] = b @ weights
    return out_a, out_b


@traceable(name="inference.influence_new", run_type="tool")
def influence_new(
    c: Cohort,
    grid: Sequence[float],
    include_auxiliary: bool = False,
    block_rows: int = BLOCK_ROWS,
) -> InfluenceMatrix:
    """Estimated influence of each subject on the new CIF estimate over `grid`."""
    g = _check_grid(grid, c.design.tau)
    n = len(c)
    weight = khat(c)
    joint = (c.delta1 == 1) & (c.delta2 == 1)

    k_full = np.zeros(n)
    if joint.any():
        k_full[joint] = weight(c.v2[joint])
    contrib = k_full[:, None] * (c.v1[:, None] <= g[None, :])
    estimate = contrib.mean(axis=0)
    main = contrib - estimate
    values = main
    terms = TermsIncluded.MAIN_ONLY

    if include_auxiliary:
        terms = TermsIncluded.MAIN_PLUS_AUXILIARY
        if joint.any():
            w = contrib[joint]
            a_w, b_w = _auxiliary_terms(
                c.r, c.v2, c.delta2, weight.table, weight.survival, n,
                c.v2[joint], w, block_rows,
            )
            values = main - a_w / n - b_w / n
        else:
            values = main.copy()

    log.debug("[inference] new influence: n=%d grid=%d terms=%s", n, g.size, terms.value)
    return InfluenceMatrix("new", g, estimate, main, values, terms)


@traceable(name="inference.influence_aj", run_type="tool")
def influence_aj(
    c: Cohort,
    grid: Sequence[float],
    include_auxiliary: bool = False,
    block_rows: int = BLOCK_ROWS,
) -> InfluenceMatrix:
    """Influence of each subject on the Aalen-Johansen estimate; prevalent rows are 0."""
    g = _check_grid(grid, c.design.tau)
    n = len(c)
    member = c.disease_free_at_entry
    n0 = int(member.sum())
    if n0 == 0:
        raise EmptyCohortError("empty post-exclusion cohort: every subject is a prevalent case")
    pi_hat = n0 / n

    table = risk_process(c, "first_event", allow_empty=True)
    first_survival = km_left_truncated(table)
    onset = member & (c.delta1 == 1)

    # K-dagger(u) = S*(u-) / Ybar°(u), Ybar° a proportion of all n
    k_dag = np.zeros(n)
    if onset.any():
        v = c.v1[onset]
        k_dag[onset] = first_survival.at_minus(v) * n / table.risk_count(v)
    contrib = k_dag[:, None] * (c.v1[:, None] <= g[None, :])
    estimate = contrib.sum(axis=0) / n
    main = np.where(member[:, None], contrib - estimate / pi_hat, 0.0)
    values = main
    terms = TermsIncluded.MAIN_ONLY

    if include_auxiliary:
        terms = TermsIncluded.MAIN_PLUS_AUXILIARY
        values = main.copy()
        if onset.any():
            w = contrib[onset]
            a_w, b_w = _auxiliary_terms(
                c.r[member], c.v1[member], c.first_event[member], table, first_survival, n0,
                c.v1[onset], w, block_rows,
            )
            values[member] = main[member] - (a_w + b_w) / n0

    log.debug("[inference] AJ influence: n=%d n0=%d grid=%d terms=%s", n, n0, g.size, terms.value)
    return InfluenceMatrix("aj", g, estimate, main, values, terms)


def influence_comb(aj: InfluenceMatrix, new: InfluenceMatrix) -> InfluenceMatrix:
    """Influence of the equal-weight combination (linear in the two)."""
    return aj.blend(new, 0.5, estimator="comb")


def influence_for(c: Cohort, estimator: str, grid: Sequence[float], include_auxiliary: bool = False) -> InfluenceMatrix:
    if estimator == "new":
        return influence_new(c, grid, include_auxiliary)
    if estimator == "aj":
        return influence_aj(c, grid, include_auxiliary)
    if estimator == "comb":
        return influence_comb(influence_aj(c, grid, include_auxiliary), influence_new(c, grid, include_auxiliary))
    raise InferenceError(f"no influence representation for estimator {estimator!r}")


@dataclass(frozen=True)
class VarianceCurve(StepCurve):
    """s^2(t) on the influence grid; `n` converts it to a standard error s/sqrt(n)."""
    n: int = 1

    def s(self, t=None):
        vals = self.values if t is None else np.asarray(self(t))
        return np.sqrt(vals)

    def se(self, t=None):
        return self.s(t) / math.sqrt(self.n)


def variance_curve(psi: InfluenceMatrix) -> VarianceCurve:
    """Empirical second moment n^-1 sum psi_i(t)^2 per grid age."""
    if not np.all(np.isfinite(psi.values)):
        raise InferenceError("influence matrix has non-finite entries")
    s2 = np.einsum("ij,ij->j", psi.values, psi.values) / psi.n
    return VarianceCurve(psi.grid, s2, 0.0, n=psi.n)


@dataclass(frozen=True)
class PointwiseCI:
    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degenerate: np.ndarray
    alpha: float
    transform: str


def _check_alpha(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise InferenceError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def pointwise_ci(
    est: CifEstimate,
    s: VarianceCurve,
    transform: "Transform | str" = "identity",
    alpha: float = 0.05,
    grid: Optional[Sequence[float]] = None,
) -> PointwiseCI:
    """Normal-theory interval g(G) +/- z g'(G) s/sqrt(n), back-transformed."""
    alpha = _check_alpha(alpha)
    tr = Transform.parse(transform)
    ages = s.knots if grid is None else np.asarray(grid, dtype=float)
    g_hat = np.asarray(est.curve(ages), dtype=float)
    se = np.asarray(s.se(ages), dtype=float)
    lower, upper, degenerate = tr.interval(g_hat, norm.ppf(1 - alpha / 2) * se)
    if degenerate.any():
        log.warning("[inference] estimate reaches 1 at %d age(s); %s interval degenerates there",
                    int(degenerate.sum()), tr.name)
    return PointwiseCI(ages, g_hat, lower, upper, degenerate, alpha, tr.name)


@dataclass(frozen=True)
class BandResult:
    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    B: int
    seed: Optional[int]
    alpha: float
    transform: str
    band_range: Tuple[float, float]
    maxima: np.ndarray = field(repr=False)
    dropped_ages: np.ndarray = field(default_factory=lambda: np.empty(0))
    degenerate: bool = False

    def contains(self, truth) -> bool:
        t = np.asarray(truth, dtype=float)
        return bool(np.all((self.lower <= t) & (t <= self.upper)))

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower))

    def metadata(self) -> dict:
        return {
            "alpha": self.alpha,
            "B": self.B,
            "seed": self.seed,
            "transform": self.transform,
            "range": [float(self.band_range[0]), float(self.band_range[1])],
            "critical_value": self.critical_value,
        }


def _multiplier_rows(B: int, n: int, seed: Optional[int]):
    for child in np.random.SeedSequence(seed).spawn(B):
        yield np.random.default_rng(child).standard_normal(n)


def upper_order_statistic(maxima: np.ndarray, alpha: float) -> float:
    """The ceil((1 - alpha) B)-th smallest of B maxima."""
    B = maxima.size
    k = min(max(int(math.ceil((1 - alpha) * B - 1e-12)), 1), B)
    return float(np.sort(maxima)[k - 1])


@traceable(name="inference.multiplier_band", run_type="tool")
def multiplier_band(
    psi: InfluenceMatrix,
    est: CifEstimate,
    s: VarianceCurve,
    band_range: Tuple[float, float],
    B: int = 250,
    alpha: float = 0.05,
    transform: "Transform | str" = "identity",
    seed: Optional[int] = None,
    multipliers: Optional[np.ndarray] = None,
    allow_degenerate: bool = False,
) -> BandResult:
    """Equal-precision simultaneous band from Gaussian multiplier resampling of psi.

    Row b of the multipliers comes from child b of SeedSequence(seed) unless an
    explicit (B, n) array is given. Grid ages with zero variance are left out
    of the supremum.
    """
    alpha = _check_alpha(alpha)
    tr = Transform.parse(transform)
    if B < 2:
        raise InferenceError(f"B must be at least 2, got {B}")
    if B < 100:
        log.warning("[band] B=%d multiplier draws is small; critical values will be noisy", B)
    lo_r, hi_r = float(band_range[0]), float(band_range[1])
    if lo_r > hi_r:
        raise InferenceError(f"band range [{lo_r:g}, {hi_r:g}] is empty")
    if seed is None and multipliers is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))

    in_range = (psi.grid >= lo_r) & (psi.grid <= hi_r)
    if not in_range.any():
        raise InferenceError(f"no grid ages inside band range [{lo_r:g}, {hi_r:g}]")
    ages = psi.grid[in_range]
    g_hat = np.asarray(est.curve(ages), dtype=float)
    se = np.asarray(s.se(ages), dtype=float)
    usable = se > 0
    dropped = ages[~usable]
    if dropped.size:
        log.info("[band] %d grid age(s) with zero variance left out of the supremum", dropped.size)

    if not usable.any():
        if not allow_degenerate:
            raise InferenceError("standard error is zero over the whole band range")
        log.warning("[band] zero variance over the band range; band collapses to the estimate")
        return BandResult(ages, g_hat, g_hat.copy(), g_hat.copy(), 0.0, B, seed, alpha, tr.name,
                          (lo_r, hi_r), np.zeros(B), dropped, degenerate=True)

    cols = psi.values[:, in_range][:, usable]
    n = psi.n
    if multipliers is not None:
        z_all = np.asarray(multipliers, dtype=float)
        if z_all.shape != (B, n):
            raise InferenceError(f"multipliers must have shape ({B}, {n}), got {z_all.shape}")
        rows = iter(z_all)
    else:
        rows = _multiplier_rows(B, n, seed)

    g_u, se_u = g_hat[usable], se[usable]
    psi_mean = cols.mean(axis=0)
    identity = tr.kind is TransformKind.IDENTITY
    maxima = np.empty(B)
    with np.errstate(divide="ignore", invalid="ignore"):
        for b, z in enumerate(rows):
            delta = z @ cols / n
            if identity:
                gamma = delta / se_u
            else:
                perturbed = np.clip(g_u + delta - psi_mean, 0.0, 1.0)
                gamma = (tr.forward(perturbed) - tr.forward(g_u)) / (tr.derivative(perturbed) * se_u)
                gamma = np.where(np.isfinite(gamma), gamma, 0.0)
            maxima[b] = np.max(np.abs(gamma))

    nu = upper_order_statistic(maxima, alpha)
    lower, upper, _ = tr.interval(g_hat, nu * se)
    log.debug("[band] %s band on [%g, %g]: critical value %.4f (B=%d)", tr.name, lo_r, hi_r, nu, B)
    return BandResult(ages, g_hat, lower, upper, nu, B, seed, alpha, tr.name, (lo_r, hi_r), maxima, dropped)


@dataclass(frozen=True)
class VarianceTermComparison:
    grid: np.ndarray
    se_main: np.ndarray
    se_full: np.ndarray

    @property
    def max_relative_difference(self) -> float:
        ok = self.se_main > 0
        if not ok.any():
            return 0.0
        return float(np.max(np.abs(self.se_full[ok] - self.se_main[ok]) / self.se_main[ok]))


def compare_variance_terms(c: Cohort, grid: Sequence[float], estimator: str = "new") -> VarianceTermComparison:
    """Standard errors with and without the auxiliary influence terms."""
    main = variance_curve(influence_for(c, estimator, grid, include_auxiliary=False))
    full = variance_curve(influence_for(c, estimator, grid, include_auxiliary=True))
    out = VarianceTermComparison(main.knots, main.se(), full.se())
    log.info("[inference] %s: auxiliary terms change the SE by at most %.1f%%",
             estimator, 100 * out.max_relative_difference)
    return out
