"""Scenario grammar and cohort sampler for simulation studies.

A scenario code d1 d2 d3 d4 picks the onset law (d1), the mean residual life
after diagnosis (d2), the recruitment law (d3) and the follow-up length (d4).
Disease-free death ages come from a Gompertz law standing in for a national
life table.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import integrate

from ..errors import ScenarioError
from ..survival.cohort import Cohort, StudyDesign
from ..survival.km import khat

log = logging.getLogger(__name__)

SAMPLER_BLOCK = int(os.getenv("PREVALENT_CIF_SAMPLER_BLOCK", "4096"))
MIN_ACCEPTANCE = 1e-4
MIN_DRAWS_BEFORE_GIVING_UP = 100_000

_CODE = re.compile(r"^[1-3][12][12][12]$")

# UKB-like recruitment: triangular density on [40, 69] with its mode at 60
UKB_LIKE_MODE = 60.0


class GompertzParams(BaseModel):
    """Hazard rate * exp(shape * age); defaults give median ~82 and ~5% alive at 95."""
    model_config = ConfigDict(frozen=True)

    shape: float = Field(0.1126, gt=0)
    rate: float = Field(7.6292e-6, gt=0)

    def survival(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return np.exp(-(self.rate / self.shape) * np.expm1(self.shape * t))

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def pdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.rate * np.exp(self.shape * t) * self.survival(t)

    def quantile_survival(self, v):
        """Age at which survival equals v, v in (0, 1]."""
        v = np.asarray(v, dtype=float)
        return np.log1p(-(self.shape / self.rate) * np.log(v)) / self.shape

    @property
    def median(self) -> float:
        return float(self.quantile_survival(0.5))


class OnsetModel(BaseModel):
    """Weibull onset age, optionally conditioned on onset at or after `truncation`."""
    model_config = ConfigDict(frozen=True)

    shape: float = Field(gt=0)
    scale: float = Field(gt=0)
    truncation: Optional[float] = Field(default=None, ge=0)

    @property
    def lower(self) -> float:
        return self.truncation or 0.0

    def _cum_hazard(self, t):
        return (np.maximum(np.asarray(t, dtype=float), 0.0) / self.scale) ** self.shape

    def survival(self, t):
        t = np.asarray(t, dtype=float)
        h0 = float(self._cum_hazard(self.lower))
        return np.where(t < self.lower, 1.0, np.exp(-(self._cum_hazard(t) - h0)))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        hazard = (self.shape / self.scale) * (np.maximum(t, 0.0) / self.scale) ** (self.shape - 1)
        return np.where(t < self.lower, 0.0, hazard * self.survival(t))

    def quantile_survival(self, v):
        v = np.asarray(v, dtype=float)
        h0 = float(self._cum_hazard(self.lower))
        return self.scale * (h0 - np.log(v)) ** (1.0 / self.shape)


ONSET_MODELS = {
    1: OnsetModel(shape=4, scale=115, truncation=40),
    2: OnsetModel(shape=4, scale=130, truncation=40),
    3: OnsetModel(shape=3.5, scale=200),
}
# mean residual life after diagnosis by (onset family, t2 setting)
POST_DIAGNOSIS_MEAN = {(1, 1): 2.5, (1, 2): 7.5, (2, 1): 2.5, (2, 2): 7.5, (3, 1): 5.0, (3, 2): 10.0}
CENSOR_OFFSETS = {1: (11.0, 15.0), 2: (11.0, 25.0)}
RECRUITMENT = {1: "uniform", 2: "ukb_like"}
SHORT_BAND_CODES = {"1211", "1221", "2211", "2221"}


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    t1_model: OnsetModel
    post_diagnosis_mean: float = Field(gt=0)
    recruitment: Literal["uniform", "ukb_like"] = "uniform"
    censor_offset: Tuple[float, float] = (11.0, 15.0)
    mortality: GompertzParams = GompertzParams()
    design: StudyDesign = StudyDesign(c_lower=40, c_upper=69, tau=80)
    n_draw_block: int = Field(default=SAMPLER_BLOCK, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        if not _CODE.match(self.code):
            raise ValueError(f"scenario code {self.code!r} is not of the form [1-3][12][12][12]")
        lo, hi = self.censor_offset
        if not 0 <= lo <= hi:
            raise ValueError(f"censor offset range ({lo}, {hi}) is invalid")
        return self

    @classmethod
    def from_code(cls, code: Union[str, int], **overrides: Any) -> "ScenarioConfig":
        code = str(code).strip()
        if not _CODE.match(code):
            raise ScenarioError(f"invalid scenario code {code!r}: digits must be (1-3)(1-2)(1-2)(1-2)")
        d1, d2, d3, d4 = (int(ch) for ch in code)
        fields: Dict[str, Any] = {
            "code": code,
            "t1_model": ONSET_MODELS[d1],
            "post_diagnosis_mean": POST_DIAGNOSIS_MEAN[(d1, d2)],
            "recruitment": RECRUITMENT[d3],
            "censor_offset": CENSOR_OFFSETS[d4],
        }
        fields.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**fields)
        except ValidationError as e:
            raise ScenarioError(f"invalid scenario {code}: {e}") from e

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "ScenarioConfig":
        data = dict(data or {})
        code = data.pop("code", None)
        settings = [data.pop(k, None) for k in ("t1_setting", "t2_setting", "recruit_setting", "censor_setting")]
        if code is None:
            if any(s is None for s in settings):
                raise ScenarioError("scenario file needs `code` or all of t1/t2/recruit/censor settings")
            code = "".join(str(int(s)) for s in settings)
        unknown = set(data) - {"mortality", "design", "post_diagnosis_mean", "censor_offset", "n_draw_block", "t1_model"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        return cls.from_code(code, **data)

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ScenarioError(f"{path}: scenario file must hold a mapping")
        return cls.from_mapping(data)

    @property
    def family(self) -> int:
        return int(self.code[0])

    @property
    def default_band_range(self) -> Tuple[float, float]:
        if self.family == 3:
            return 35.0, 80.0
        if self.code in SHORT_BAND_CODES:
            return 50.0, 75.0
        return 50.0, 80.0

    def config_hash(self) -> str:
        payload = self.model_dump_json(exclude={"n_draw_block"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    # recruitment law on [c_lower, c_upper]

    def recruitment_quantile(self, u):
        lo, hi = self.design.c_lower, self.design.c_upper
        u = np.asarray(u, dtype=float)
        if self.recruitment == "uniform" or hi == lo:
            return lo + (hi - lo) * u
        mode = min(max(UKB_LIKE_MODE, lo), hi)
        f_mode = (mode - lo) / (hi - lo)
        return np.where(
            u < f_mode,
            lo + np.sqrt(u * (hi - lo) * (mode - lo)),
            hi - np.sqrt((1.0 - u) * (hi - lo) * (hi - mode)),
        )

    def recruitment_pdf(self, r):
        lo, hi = self.design.c_lower, self.design.c_upper
        r = np.asarray(r, dtype=float)
        inside = (r >= lo) & (r <= hi)
        if self.recruitment == "uniform":
            return np.where(inside, 1.0 / (hi - lo), 0.0)
        mode = min(max(UKB_LIKE_MODE, lo), hi)
        up = 2 * (r - lo) / ((hi - lo) * (mode - lo)) if mode > lo else np.zeros_like(r)
        down = 2 * (hi - r) / ((hi - lo) * (hi - mode)) if hi > mode else np.zeros_like(r)
        return np.where(inside, np.where(r < mode, up, down), 0.0)

    def observable_probability(self, v: float) -> float:
        """P(R <= v <= C) with C = R + offset, offset uniform on censor_offset."""
        lo_o, hi_o = self.censor_offset

        def integrand(r):
            gap = v - r
            if gap <= lo_o:
                still = 1.0
            elif hi_o == lo_o:
                still = 0.0
            else:
                still = min(max((hi_o - gap) / (hi_o - lo_o), 0.0), 1.0)
            return float(self.recruitment_pdf(r)) * still

        upper = min(v, self.design.c_upper)
        if upper <= self.design.c_lower:
            return 0.0
        points = [p for p in (v - hi_o, v - lo_o, UKB_LIKE_MODE) if self.design.c_lower < p < upper]
        value, _ = integrate.quad(integrand, self.design.c_lower, upper, points=points or None, limit=200)
        return value


def latent_block(cfg: ScenarioConfig, u: np.ndarray) -> Dict[str, np.ndarray]:
    """Map a (m, 5) block of uniforms on [0, 1) to latent ages via inverse CDFs."""
    surv = 1.0 - u  # in (0, 1]
    death_free = cfg.mortality.quantile_survival(surv[:, 0])
    onset = cfg.t1_model.quantile_survival(surv[:, 1])
    residual = -cfg.post_diagnosis_mean * np.log(surv[:, 2])
    recruit = cfg.recruitment_quantile(u[:, 3])
    lo_o, hi_o = cfg.censor_offset
    censor = recruit + lo_o + (hi_o - lo_o) * u[:, 4]

    diseased = onset < death_free
    t1 = np.where(diseased, onset, np.inf)
    t2 = np.where(diseased, onset + residual, death_free)
    return {"t1": t1, "t2": t2, "r": recruit, "c": censor, "d": death_free}


def baseline_mortality_sampler(params: GompertzParams, seed: Optional[int] = None, size: Optional[int] = None):
    """Inverse-CDF Gompertz death ages (a float when size is None)."""
    u = np.random.default_rng(seed).random(size)
    out = params.quantile_survival(1.0 - u)
    return float(out) if np.ndim(out) == 0 else out


@traceable(name="scenarios.sample_cohort", run_type="tool")
def sample_cohort(cfg: ScenarioConfig, n: int, seed: int) -> Cohort:
    """Draw latent subjects block by block until n survive to recruitment.

    Block k of cfg.n_draw_block latent draws uses SeedSequence(seed,
    spawn_key=(k,)); accepted subjects keep their draw order. The block is the
    unit of the random stream, so the cohort is a function of (cfg, n, seed)
    including cfg.n_draw_block: the same seed with a different block size gives
    a different, equally valid cohort. config_hash leaves the block size out,
    so records that must reproduce a cohort carry it separately.
    """
    if n < 1:
        raise ScenarioError(f"n must be >= 1, got {n}")
    block = cfg.n_draw_block
    parts = []
    accepted = drawn = k = 0
    while accepted < n:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        lat = latent_block(cfg, rng.random((block, 5)))
        keep = lat["t2"] >= lat["r"]
        parts.append({key: val[keep] for key, val in lat.items()})
        accepted += int(keep.sum())
        drawn += block
        k += 1
        if drawn >= MIN_DRAWS_BEFORE_GIVING_UP and accepted / drawn < MIN_ACCEPTANCE:
            raise ScenarioError(
                f"scenario {cfg.code}: acceptance rate {accepted / drawn:.2e} below {MIN_ACCEPTANCE:g}; check the configuration"
            )

    lat = {key: np.concatenate([p[key] for p in parts])[:n] for key in parts[0]}
    t1, t2, r, cens = lat["t1"], lat["t2"], lat["r"], lat["c"]
    v2 = np.minimum(t2, cens)
    v1 = np.minimum(t1, v2)
    delta1 = (t1 <= v2).astype(np.int8)
    delta2 = (t2 <= cens).astype(np.int8)
    log.debug("[simulate] scenario %s: %d accepted of %d drawn", cfg.code, n, drawn)
    return Cohort(v1, v2, delta1, delta2, r, cfg.design)


def ipw_identity_profile(cohort: Cohort, cfg: ScenarioConfig, ages: Sequence[float]) -> pd.DataFrame:
    """K(v) * P(R <= v <= C) at the given ages; flat in v when the weight is right."""
    weight = khat(cohort)
    ages = np.asarray(ages, dtype=float)
    k = np.asarray(weight(ages), dtype=float)
    p_obs = np.array([cfg.observable_probability(float(v)) for v in ages])
    frame = pd.DataFrame({"age": ages, "khat": k, "p_observable": p_obs, "product": k * p_obs})
    spread = (frame["product"].max() - frame["product"].min()) / frame["product"].mean()
    frame.attrs["relative_spread"] = float(spread)
    log.debug("[simulate] IPW identity relative spread %.3f over %d ages", spread, ages.size)
    return frame
