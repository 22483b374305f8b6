from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import __version__
from .errors import HEADER_ROW, CohortValidationError, Rejection
from .survival.cohort import RECORD_FIELDS, Cohort, StudyDesign, validate_cohort
from .survival.estimators import CifEstimate
from .survival.inference import BandResult, PointwiseCI
from .survival.km import StepCurve

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
COHORT_HEADER = ["id", *RECORD_FIELDS]


def _default(obj: Any):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
    return path


def read_cohort_csv(path: PathLike, design: StudyDesign) -> Cohort:
    """Read `id,v1,v2,delta1,delta2,r` and validate every row (strict reject).

    An empty or unparsable file, or a header missing required columns, is a
    CohortValidationError like any rejected row.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise CohortValidationError([Rejection(HEADER_ROW, "header", "file is empty")], f"{path}: file is empty") from None
    except pd.errors.ParserError as exc:
        raise CohortValidationError([Rejection(HEADER_ROW, "file", f"unparsable CSV: {exc}")], f"{path}: unparsable CSV") from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in COHORT_HEADER if c not in frame.columns]
    if missing:
        rejections = [Rejection(HEADER_ROW, c, "missing column") for c in missing]
        raise CohortValidationError(
            rejections, f"{path}: missing column(s) {', '.join(missing)}; expected header {','.join(COHORT_HEADER)}"
        )
    log.debug("[io] read %d rows from %s", len(frame), path)
    return validate_cohort(frame[COHORT_HEADER], design)


def write_cohort_csv(cohort: Cohort, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cohort.to_frame()[COHORT_HEADER].to_csv(path, index=False, lineterminator="\n")
    return path


def write_curve_csv(curve: StepCurve, path: PathLike, column: str = "value") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_frame(column).to_csv(path, index=False, lineterminator="\n")
    return path


def write_estimate(est: CifEstimate, directory: PathLike) -> Path:
    """curve.csv (`age,cif`) plus curve.json header."""
    directory = Path(directory)
    out = write_curve_csv(est.curve, directory / "curve.csv", column="cif")
    write_json(est.header(), directory / "curve.json")
    return out


def _interval_frame(grid, estimate, lower, upper) -> pd.DataFrame:
    return pd.DataFrame({"age": grid, "estimate": estimate, "lower": lower, "upper": upper})


def write_ci(ci: PointwiseCI, directory: PathLike, se: Optional[np.ndarray] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = _interval_frame(ci.grid, ci.estimate, ci.lower, ci.upper)
    if se is not None:
        frame["se"] = se
    frame["degenerate"] = ci.degenerate.astype(int)
    frame.to_csv(directory / "ci.csv", index=False, lineterminator="\n")
    write_json({"alpha": ci.alpha, "transform": ci.transform}, directory / "ci.json")
    return directory / "ci.csv"


def write_band(band: BandResult, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _interval_frame(band.grid, band.estimate, band.lower, band.upper).to_csv(
        directory / "band.csv", index=False, lineterminator="\n"
    )
    meta = band.metadata()
    meta["dropped_ages"] = band.dropped_ages.tolist()
    write_json(meta, directory / "band.json")
    return directory / "band.csv"


def write_study(summary, directory: PathLike) -> Path:
    """summary.json plus one per-age CSV per estimator."""
    directory = Path(directory)
    write_json(summary.model_dump(mode="json"), directory / "summary.json")
    for name in summary.estimators:
        summary.per_age_frame(name).to_csv(directory / f"{name}_by_age.csv", index=False, lineterminator="\n")
    return directory / "summary.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest(BaseModel):
    """Everything needed to rerun a CLI invocation; written before any output."""
    subcommand: str
    inputs: List[str] = Field(default_factory=list)
    output_dir: str
    seed: Optional[int] = None
    parameters: Dict[str, Any] = Field(default_factory=dict)
    tool_version: str = __version__
    started_at: str = Field(default_factory=_now)
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: List[str] = Field(default_factory=list)

    def write(self) -> Path:
        return write_json(self.model_dump(mode="json"), Path(self.output_dir) / "manifest.json")

    def finish(self, status: str = "ok") -> Path:
        self.finished_at = _now()
        self.status = status
        return self.write()


def read_manifest(path: PathLike) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
