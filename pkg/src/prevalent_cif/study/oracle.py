from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from langsmith import traceable
from scipy import integrate

from ..errors import OracleError
from ..survival.estimators import EstimandTag
from .scenarios import ScenarioConfig, latent_block

log = logging.getLogger(__name__)

ORACLE_DRAWS = int(os.getenv("PREVALENT_CIF_ORACLE_DRAWS", "10000000"))
MC_CHUNK = 1_000_000
QUAD_EPSABS = 1e-6


@dataclass(frozen=True)
class OracleCurve:
    """True CIF under both conditioning events, with and without the T2 <= tau restriction."""
    grid: np.ndarray
    new: np.ndarray        # G1(t | T2 >= c_L)
    aj: np.ndarray         # G1(t | T1 >= c_L, T2 >= c_L)
    new_tau: np.ndarray
    aj_tau: np.ndarray
    method: str
    mc_se: Dict[str, np.ndarray] = field(default_factory=dict)

    def target(self, tag: EstimandTag, restrict_tau: bool = False) -> np.ndarray:
        new = self.new_tau if restrict_tau else self.new
        aj = self.aj_tau if restrict_tau else self.aj
        if tag is EstimandTag.NEW_CONDITIONAL:
            return new
        if tag is EstimandTag.AJ_CONDITIONAL:
            return aj
        return 0.5 * (new + aj)

    def at(self, ages: Sequence[float], tag: EstimandTag, restrict_tau: bool = False) -> np.ndarray:
        ages = np.asarray(ages, dtype=float)
        idx = np.searchsorted(self.grid, ages)
        if np.any(idx >= self.grid.size) or not np.array_equal(self.grid[np.minimum(idx, self.grid.size - 1)], ages):
            raise OracleError("requested ages are not on the oracle grid")
        return self.target(tag, restrict_tau)[idx]


def _quad(fn: Callable[[float], float], a: float, b: float) -> float:
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(fn, a, b, epsabs=QUAD_EPSABS, limit=200)
        except integrate.IntegrationWarning as e:
            raise OracleError(f"quadrature did not converge on [{a:g}, {b:g}]: {e}") from e
    return value


def _cumulative(fn: Callable[[float], float], grid: np.ndarray, start: float, breaks: Sequence[float]) -> np.ndarray:
    """int_start^t fn for each t in the sorted grid, piece by piece."""
    out = np.zeros(grid.size)
    total, prev = 0.0, start
    for i, t in enumerate(grid):
        if t > prev:
            cuts = [prev] + [b for b in breaks if prev < b < t] + [t]
            total += sum(_quad(fn, lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:]))
            prev = t
        out[i] = total
    return out


def _closed_form(cfg: ScenarioConfig, grid: np.ndarray) -> OracleCurve:
    onset, mort = cfg.t1_model, cfg.mortality
    c_l, tau, mu = cfg.design.c_lower, cfg.design.tau, cfg.post_diagnosis_mean
    start = onset.lower

    def joint(u: float) -> float:
        # onset at u before disease-free death
        return float(onset.pdf(u) * mort.survival(u))

    def alive_at_cl(u: float) -> float:
        return 1.0 if u >= c_l else float(np.exp(-(c_l - u) / mu))

    def dead_by_tau(u: float) -> float:
        return float(-np.expm1(-(tau - u) / mu)) if u < tau else 0.0

    def new_num(u):
        return joint(u) * alive_at_cl(u)

    def new_num_tau(u):
        return joint(u) * max(alive_at_cl(u) - (1.0 - dead_by_tau(u)), 0.0)

    def aj_num(u):
        return joint(u) if u >= c_l else 0.0

    def aj_num_tau(u):
        return joint(u) * dead_by_tau(u) if u >= c_l else 0.0

    both_alive = float(onset.survival(c_l) * mort.survival(c_l))
    pre_cl = _quad(lambda u: joint(u) * np.exp(-(c_l - u) / mu), start, c_l) if start < c_l else 0.0
    den_new = both_alive + pre_cl
    if den_new <= 0 or both_alive <= 0:
        raise OracleError(f"scenario {cfg.code}: conditioning event has zero probability")

    breaks = [c_l]
    out = {
        "new": _cumulative(new_num, grid, start, breaks) / den_new,
        "new_tau": _cumulative(new_num_tau, grid, start, breaks) / den_new,
        "aj": _cumulative(aj_num, grid, start, breaks) / both_alive,
        "aj_tau": _cumulative(aj_num_tau, grid, start, breaks) / both_alive,
    }
    return OracleCurve(grid, method="closed_form_integration", **{k: np.maximum.accumulate(v) for k, v in out.items()})


def _monte_carlo(cfg: ScenarioConfig, grid: np.ndarray, draws: int, seed: int) -> OracleCurve:
    c_l, tau = cfg.design.c_lower, cfg.design.tau
    counts = {key: np.zeros(grid.size) for key in ("new", "new_tau", "aj", "aj_tau")}
    n_new = n_aj = 0
    done, chunk_id = 0, 0
    while done < draws:
        m = min(MC_CHUNK, draws - done)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk_id,)))
        lat = latent_block(cfg, rng.random((m, 5)))
        t1, t2 = lat["t1"], lat["t2"]
        cond_new = t2 >= c_l
        cond_aj = (t1 >= c_l) & (t2 >= c_l)
        event = np.isfinite(t1)
        n_new += int(cond_new.sum())
        n_aj += int(cond_aj.sum())
        for key, cond, extra in (
            ("new", cond_new, True),
            ("new_tau", cond_new, t2 <= tau),
            ("aj", cond_aj, True),
            ("aj_tau", cond_aj, t2 <= tau),
        ):
            onsets = np.sort(t1[cond & event & extra])
            counts[key] += np.searchsorted(onsets, grid, side="right")
        done += m
        chunk_id += 1

    if n_new == 0 or n_aj == 0:
        raise OracleError(f"scenario {cfg.code}: no latent draws met the conditioning event")
    dens = {"new": n_new, "new_tau": n_new, "aj": n_aj, "aj_tau": n_aj}
    probs = {k: counts[k] / dens[k] for k in counts}
    se = {k: np.sqrt(probs[k] * (1 - probs[k]) / dens[k]) for k in probs}
    return OracleCurve(grid, method=f"monte_carlo({draws})", mc_se=se, **probs)


@traceable(name="oracle.true_cif", run_type="tool")
def true_cif(
    cfg: ScenarioConfig,
    grid: Sequence[float],
    method: str = "closed_form_integration",
    draws: Optional[int] = None,
    seed: int = 0,
) -> OracleCurve:
    """True target CIFs of a scenario on `grid`, by quadrature or by latent simulation.

    Censoring and recruitment do not enter; the residual life after diagnosis
    is exponential, so only one-dimensional integrals over onset age remain.
    """
    g = np.unique(np.asarray(grid, dtype=float))
    if method in ("closed_form_integration", "quad"):
        curve = _closed_form(cfg, g)
    elif method in ("monte_carlo", "mc"):
        curve = _monte_carlo(cfg, g, int(draws or ORACLE_DRAWS), seed)
    else:
        raise OracleError(f"unknown oracle method {method!r}")
    log.info("[oracle] scenario %s via %s on %d ages", cfg.code, curve.method, g.size)
    return curve
