from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from langsmith import traceable
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from ..errors import InferenceError, ReplicationError
from ..survival.estimators import EstimandTag, aalen_johansen, combination_cif, new_cif
from ..survival.inference import (
    influence_aj,
    influence_comb,
    influence_new,
    multiplier_band,
    pointwise_ci,
    variance_curve,
)
from . import reference
from .oracle import OracleCurve, true_cif
from .scenarios import ScenarioConfig, sample_cohort

log = logging.getLogger(__name__)

THREADS = int(os.getenv("PREVALENT_CIF_THREADS", "1"))

ESTIMAND = {"aj": EstimandTag.AJ_CONDITIONAL, "new": EstimandTag.NEW_CONDITIONAL, "comb": EstimandTag.COMBINED}
STUDY_ESTIMATORS = tuple(ESTIMAND)

# spawn-key streams under the master seed
_COHORT_STREAM = 0
_BAND_STREAM = 1


def replication_seed(master_seed: int, rep: int) -> int:
    """Cohort seed of replication `rep`, fixed by (master_seed, rep) alone."""
    state = np.random.SeedSequence(master_seed, spawn_key=(_COHORT_STREAM, rep)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def band_seed(master_seed: int, rep: int, estimator: str) -> int:
    idx = STUDY_ESTIMATORS.index(estimator)
    state = np.random.SeedSequence(master_seed, spawn_key=(_BAND_STREAM, rep, idx)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class ReplicationTask:
    cfg: ScenarioConfig
    n: int
    rep: int
    master_seed: int
    grid: Tuple[float, ...]
    band_range: Tuple[float, float]
    B: int
    alpha: float
    transform: str
    estimators: Tuple[str, ...]
    include_auxiliary: bool = False


def run_replication(task: ReplicationTask) -> Dict[str, Dict[str, np.ndarray]]:
    """One simulated cohort: estimates, standard errors, CIs and bands on the grid."""
    seed = replication_seed(task.master_seed, task.rep)
    try:
        cohort = sample_cohort(task.cfg, task.n, seed)
        grid = np.asarray(task.grid, dtype=float)
        wanted = set(task.estimators)
        ests, psis = {}, {}
        if wanted & {"aj", "comb"}:
            ests["aj"] = aalen_johansen(cohort)
            psis["aj"] = influence_aj(cohort, grid, task.include_auxiliary)
        if wanted & {"new", "comb"}:
            ests["new"] = new_cif(cohort)
            psis["new"] = influence_new(cohort, grid, task.include_auxiliary)
        if "comb" in wanted:
            ests["comb"] = combination_cif(ests["aj"], ests["new"], allow_estimand_mismatch=True)
            psis["comb"] = influence_comb(psis["aj"], psis["new"])

        out: Dict[str, Dict[str, np.ndarray]] = {}
        for name in task.estimators:
            est, psi = ests[name], psis[name]
            var = variance_curve(psi)
            ci = pointwise_ci(est, var, task.transform, task.alpha)
            band = multiplier_band(
                psi, est, var, task.band_range, task.B, task.alpha, task.transform,
                seed=band_seed(task.master_seed, task.rep, name), allow_degenerate=True,
            )
            out[name] = {
                "estimate": ci.estimate,
                "se": var.se(),
                "lower": ci.lower,
                "upper": ci.upper,
                "band_lower": band.lower,
                "band_upper": band.upper,
                "band_usable": ~np.isin(band.grid, band.dropped_ages),
                "critical_value": np.array(band.critical_value),
            }
        return out
    except Exception as e:
        raise ReplicationError(task.rep, seed, e) from e


class EstimatorSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimand_tag: str
    mean: List[float]
    median: List[float]
    sd: List[float]
    iqr: List[float]
    mean_se: List[float]
    oracle: List[float]
    oracle_tau: List[float]
    bias: List[float]
    ci_coverage: List[float]
    ci_coverage_tau: List[float]
    ci_coverage_mc_se: List[float]
    mean_ci_width: List[float]
    band_coverage: float
    band_coverage_tau: float
    band_coverage_mc_se: float
    mean_band_width: float
    mean_critical_value: float


class ReplicationSummary(BaseModel):
    """Aggregates over replications; contains no timing or worker information."""
    model_config = ConfigDict(frozen=True)

    scenario: str
    config_hash: str
    n_draw_block: int
    n: int
    n_reps: int
    B: int
    alpha: float
    transform: str
    band_range: Tuple[float, float]
    grid: List[float]
    include_auxiliary: bool
    master_seed: int
    oracle_method: str
    estimators: Dict[str, EstimatorSummary]
    reference_band_coverage: Optional[Dict[str, float]] = None

    def per_age_frame(self, estimator: str) -> pd.DataFrame:
        s = self.estimators[estimator]
        return pd.DataFrame({
            "age": self.grid,
            "mean": s.mean,
            "median": s.median,
            "sd": s.sd,
            "iqr": s.iqr,
            "mean_se": s.mean_se,
            "oracle": s.oracle,
            "bias": s.bias,
            "coverage": s.ci_coverage,
            "coverage_tau": s.ci_coverage_tau,
            "coverage_mc_se": s.ci_coverage_mc_se,
            "mean_ci_width": s.mean_ci_width,
        })


_ORACLE_CACHE: Dict[tuple, OracleCurve] = {}


def oracle_for(cfg: ScenarioConfig, grid: Sequence[float], method: str = "closed_form_integration",
               draws: Optional[int] = None, seed: int = 0) -> OracleCurve:
    """true_cif memoised on (config hash, grid, method, draws, seed)."""
    key = (cfg.config_hash(), tuple(float(g) for g in grid), method, draws, seed)
    if key not in _ORACLE_CACHE:
        _ORACLE_CACHE[key] = true_cif(cfg, grid, method, draws=draws, seed=seed)
    return _ORACLE_CACHE[key]


def _binomial_se(p, reps: int):
    p = np.asarray(p, dtype=float)
    return np.sqrt(p * (1 - p) / reps)


def _summarise(
    name: str,
    results: List[Dict[str, Dict[str, np.ndarray]]],
    oracle: OracleCurve,
    grid: np.ndarray,
    band_range: Tuple[float, float],
) -> EstimatorSummary:
    tag = ESTIMAND[name]
    truth = oracle.at(grid, tag)
    truth_tau = oracle.at(grid, tag, restrict_tau=True)
    in_band = (grid >= band_range[0]) & (grid <= band_range[1])
    reps = len(results)

    est = np.vstack([r[name]["estimate"] for r in results])
    se = np.vstack([r[name]["se"] for r in results])
    lo = np.vstack([r[name]["lower"] for r in results])
    hi = np.vstack([r[name]["upper"] for r in results])
    ci_hit = (lo <= truth) & (truth <= hi)
    ci_hit_tau = (lo <= truth_tau) & (truth_tau <= hi)

    band_hits, band_hits_tau, widths, crit = [], [], [], []
    for r in results:
        res = r[name]
        use = res["band_usable"]
        b_lo, b_hi = res["band_lower"][use], res["band_upper"][use]
        t_b, t_bt = truth[in_band][use], truth_tau[in_band][use]
        band_hits.append(bool(np.all((b_lo <= t_b) & (t_b <= b_hi))))
        band_hits_tau.append(bool(np.all((b_lo <= t_bt) & (t_bt <= b_hi))))
        widths.append(float(np.mean(res["band_upper"] - res["band_lower"])))
        crit.append(float(res["critical_value"]))

    q25, q75 = np.percentile(est, [25, 75], axis=0)
    band_cov = float(np.mean(band_hits))
    ci_cov = ci_hit.mean(axis=0)
    return EstimatorSummary(
        estimand_tag=tag.value,
        mean=est.mean(axis=0).tolist(),
        median=np.median(est, axis=0).tolist(),
        sd=(est.std(axis=0, ddof=1) if reps > 1 else np.zeros(grid.size)).tolist(),
        iqr=(q75 - q25).tolist(),
        mean_se=se.mean(axis=0).tolist(),
        oracle=truth.tolist(),
        oracle_tau=truth_tau.tolist(),
        bias=(est.mean(axis=0) - truth).tolist(),
        ci_coverage=ci_cov.tolist(),
        ci_coverage_tau=ci_hit_tau.mean(axis=0).tolist(),
        ci_coverage_mc_se=_binomial_se(ci_cov, reps).tolist(),
        mean_ci_width=(hi - lo).mean(axis=0).tolist(),
        band_coverage=band_cov,
        band_coverage_tau=float(np.mean(band_hits_tau)),
        band_coverage_mc_se=float(_binomial_se(band_cov, reps)),
        mean_band_width=float(np.mean(widths)),
        mean_critical_value=float(np.mean(crit)),
    )


def _iter_results(tasks: List[ReplicationTask], threads: int, progress: bool) -> Iterable[Dict]:
    bar = dict(total=len(tasks), desc="replications", disable=not progress, leave=False)
    if threads <= 1:
        yield from tqdm(map(run_replication, tasks), **bar)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        # map yields in submission order whatever the completion order
        yield from tqdm(pool.map(run_replication, tasks, chunksize=max(1, len(tasks) // (8 * threads))), **bar)


@traceable(name="harness.run_study", run_type="chain")
def run_study(
    cfg: ScenarioConfig,
    n: int,
    n_reps: int,
    B: int = 250,
    alpha: float = 0.05,
    grid: Optional[Sequence[float]] = None,
    band_range: Optional[Tuple[float, float]] = None,
    estimators: Sequence[str] = STUDY_ESTIMATORS,
    seed: int = 0,
    transform: str = "arcsine-root",
    include_auxiliary: bool = False,
    threads: int = THREADS,
    oracle_method: str = "closed_form_integration",
    oracle_draws: Optional[int] = None,
    progress: bool = False,
) -> ReplicationSummary:
    """Replicated simulation study of the requested estimators under one scenario.

    Replication r is fully determined by (seed, r); results are reduced in
    replication order so the summary does not depend on `threads`.
    """
    if n < 1 or n_reps < 1 or B < 2:
        raise InferenceError(f"need n >= 1, n_reps >= 1, B >= 2 (got {n}, {n_reps}, {B})")
    unknown = set(estimators) - set(STUDY_ESTIMATORS)
    if unknown:
        raise InferenceError(f"unknown estimator(s) for a study: {', '.join(sorted(unknown))}")
    estimators = tuple(e for e in STUDY_ESTIMATORS if e in set(estimators))
    if grid is None:
        lo = 35.0 if cfg.family == 3 else cfg.design.c_lower
        grid = np.arange(lo, cfg.design.tau + 1.0)
    g = np.unique(np.asarray(grid, dtype=float))
    band_range = tuple(float(x) for x in (band_range or cfg.default_band_range))
    if not (g[0] <= band_range[0] <= band_range[1] <= g[-1]):
        raise InferenceError(f"band range {band_range} is not inside the grid span [{g[0]:g}, {g[-1]:g}]")
    if cfg.family == 3 and "comb" in estimators:
        log.warning("[harness] scenario %s: Aalen-Johansen and new estimators target different estimands", cfg.code)

    oracle = oracle_for(cfg, g, oracle_method, oracle_draws, seed)
    tasks = [
        ReplicationTask(cfg, n, rep, seed, tuple(g.tolist()), band_range, B, alpha, transform, estimators, include_auxiliary)
        for rep in range(n_reps)
    ]
    log.info("[harness] scenario %s: n=%d reps=%d B=%d threads=%d", cfg.code, n, n_reps, B, threads)
    results = list(_iter_results(tasks, threads, progress))

    return ReplicationSummary(
        scenario=cfg.code,
        config_hash=cfg.config_hash(),
        n_draw_block=cfg.n_draw_block,
        n=n,
        n_reps=n_reps,
        B=B,
        alpha=alpha,
        transform=transform,
        band_range=band_range,
        grid=g.tolist(),
        include_auxiliary=include_auxiliary,
        master_seed=seed,
        oracle_method=oracle.method,
        estimators={name: _summarise(name, results, oracle, g, band_range) for name in estimators},
        reference_band_coverage=reference.band_coverage(cfg.code, n),
    )


def compare_estimators(summary: ReplicationSummary, bias_z: float = 2.0) -> pd.DataFrame:
    """Per-age SD and width ratios new / AJ, with efficiency and downward-bias flags."""
    if not {"aj", "new"} <= set(summary.estimators):
        raise InferenceError("efficiency comparison needs both 'aj' and 'new' in the summary")
    aj, new = summary.estimators["aj"], summary.estimators["new"]
    sd_aj, sd_new = np.asarray(aj.sd), np.asarray(new.sd)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd_ratio = np.where(sd_aj > 0, sd_new / sd_aj, np.where(sd_new > 0, np.inf, 1.0))
        w_aj, w_new = np.asarray(aj.mean_ci_width), np.asarray(new.mean_ci_width)
        width_ratio = np.where(w_aj > 0, w_new / w_aj, np.where(w_new > 0, np.inf, 1.0))
    bias_new = np.asarray(new.bias)
    mc_err = sd_new / np.sqrt(summary.n_reps)
    frame = pd.DataFrame({
        "age": summary.grid,
        "sd_aj": sd_aj,
        "sd_new": sd_new,
        "sd_ratio": sd_ratio,
        "ci_width_ratio": width_ratio,
        "new_less_efficient": sd_ratio > 1,
        "bias_new": bias_new,
        "downward_bias_new": bias_new < -bias_z * mc_err,
    })
    frame.attrs["band_width_ratio"] = (new.mean_band_width / aj.mean_band_width) if aj.mean_band_width > 0 else float("nan")
    flagged = frame.loc[frame["new_less_efficient"], "age"].tolist()
    if flagged:
        log.info("[harness] new estimator SD above AJ at ages %s", flagged)
    return frame
