from __future__ import annotations

# Ensure package imports work when this file is imported by path (e.g., LangGraph Studio)
import sys
from pathlib import Path
_SRC_DIR = Path(__file__).resolve().parents[1]
if str(_SRC_DIR) not in sys.path:
    sys.path.insert(0, str(_SRC_DIR))

import logging
from typing import Any, Dict, List, Optional, Tuple
from typing_extensions import TypedDict

import numpy as np
from langgraph.graph import StateGraph

from prevalent_cif import io
from prevalent_cif.survival.cohort import Cohort, StudyDesign, class_counts, cohort_summary, restrict_t1_after
from prevalent_cif.survival.estimators import (
    CifEstimate,
    aalen_johansen,
    check_prevalent_support,
    combination_cif,
    new_cif,
    tie_general_cif,
)
from prevalent_cif.survival.inference import (
    BandResult,
    InfluenceMatrix,
    PointwiseCI,
    VarianceCurve,
    influence_aj,
    influence_comb,
    influence_new,
    multiplier_band,
    pointwise_ci,
    variance_curve,
)

log = logging.getLogger(__name__)

ESTIMATOR_ORDER = ("aj", "new", "tie", "comb")


class EstimateState(TypedDict, total=False):
    # Cohort CSV path (ignored when `cohort` is already set)
    input_path: str
    output_dir: str
    # c_lower / c_upper / tau
    design: Dict[str, float]
    # subset of aj | new | tie | comb
    estimators: List[str]
    transform: str
    alpha: float
    grid: List[float]
    # (tau1, tau2); no band when absent
    band_range: Tuple[float, float]
    B: int
    seed: int
    include_auxiliary: bool
    restrict_t1_after: float
    allow_estimand_mismatch: bool
    # intervals only, no curve/CI files (band subcommand)
    band_only: bool
    # filled by the nodes
    cohort: Cohort
    estimates: Dict[str, CifEstimate]
    influence: Dict[str, InfluenceMatrix]
    variance: Dict[str, VarianceCurve]
    cis: Dict[str, PointwiseCI]
    bands: Dict[str, BandResult]
    summary: Dict[str, Any]
    outputs: List[str]


def _design(state: EstimateState) -> StudyDesign:
    return StudyDesign(**(state.get("design") or {"c_lower": 40, "c_upper": 69, "tau": 80}))


def default_grid(c: Cohort) -> List[float]:
    """Whole ages from the first observed onset (or c_lower) up to tau."""
    onsets = c.v1[c.delta1 == 1]
    start = np.floor(onsets.min()) if onsets.size else np.floor(c.design.c_lower)
    start = max(start, 1.0)
    return np.arange(start, np.floor(c.design.tau) + 1.0).tolist()


def load_node(state: EstimateState) -> EstimateState:
    """Read and validate the cohort, then apply the optional onset restriction."""
    cohort = state.get("cohort")
    if cohort is None:
        cohort = io.read_cohort_csv(state["input_path"], _design(state))
    threshold = state.get("restrict_t1_after")
    if threshold is not None:
        cohort = restrict_t1_after(cohort, float(threshold))
    state["cohort"] = cohort
    log.info("[estimate] cohort of %d subjects (%d prevalent)", len(cohort), int(cohort.prevalent.sum()))
    return state


def estimate_node(state: EstimateState) -> EstimateState:
    c = state["cohort"]
    wanted = [e for e in ESTIMATOR_ORDER if e in set(state.get("estimators") or ["aj", "new"])]
    ests: Dict[str, CifEstimate] = {}
    if "aj" in wanted or "comb" in wanted:
        ests["aj"] = aalen_johansen(c)
    if "new" in wanted or "comb" in wanted:
        ests["new"] = new_cif(c)
    if "tie" in wanted:
        ests["tie"] = tie_general_cif(c)
    if "comb" in wanted:
        ests["comb"] = combination_cif(ests["aj"], ests["new"], state.get("allow_estimand_mismatch", False))

    summary = {"cohort": cohort_summary(c), "classes": class_counts(c), "estimators": {}}
    if "aj" in ests and "new" in ests:
        summary["insufficient_prevalent_support"] = check_prevalent_support(ests["aj"], ests["new"])
    for name in wanted:
        summary["estimators"][name] = ests[name].header()
    state["estimates"] = {name: ests[name] for name in wanted}
    state["summary"] = summary
    return state


def inference_node(state: EstimateState) -> EstimateState:
    """Influence matrices, variance curves and pointwise intervals."""
    c = state["cohort"]
    grid = state.get("grid") or default_grid(c)
    aux = bool(state.get("include_auxiliary", False))
    psis: Dict[str, InfluenceMatrix] = {}
    for name in state["estimates"]:
        if name == "aj" or name == "comb":
            psis.setdefault("aj", influence_aj(c, grid, aux))
        if name == "new" or name == "comb":
            psis.setdefault("new", influence_new(c, grid, aux))
        if name == "comb":
            psis["comb"] = influence_comb(psis["aj"], psis["new"])
        if name == "tie":
            log.info("[estimate] tie-general estimator: curve only, no influence representation")
    psis = {k: v for k, v in psis.items() if k in state["estimates"]}

    state["influence"] = psis
    state["variance"] = {k: variance_curve(v) for k, v in psis.items()}
    state["cis"] = {
        k: pointwise_ci(state["estimates"][k], state["variance"][k], state.get("transform", "identity"),
                        state.get("alpha", 0.05))
        for k in psis
    }
    return state


def band_node(state: EstimateState) -> EstimateState:
    bands: Dict[str, BandResult] = {}
    for name, psi in state["influence"].items():
        bands[name] = multiplier_band(
            psi,
            state["estimates"][name],
            state["variance"][name],
            state["band_range"],
            B=int(state.get("B", 250)),
            alpha=state.get("alpha", 0.05),
            transform=state.get("transform", "identity"),
            seed=state.get("seed"),
            allow_degenerate=True,
        )
    state["bands"] = bands
    return state


def write_node(state: EstimateState) -> EstimateState:
    out_dir = state.get("output_dir")
    if not out_dir:
        return state
    root = Path(out_dir)
    outputs: List[str] = []
    band_only = bool(state.get("band_only"))
    for name, est in state["estimates"].items():
        sub = root / name
        if not band_only:
            outputs.append(str(io.write_estimate(est, sub)))
            if name in state.get("cis", {}):
                outputs.append(str(io.write_ci(state["cis"][name], sub, se=state["variance"][name].se())))
        if name in state.get("bands", {}):
            outputs.append(str(io.write_band(state["bands"][name], sub)))
    outputs.append(str(io.write_json(state["summary"], root / "summary.json")))
    state["outputs"] = outputs
    return state


# --- Build graph ---

def build_graph():
    graph = StateGraph(EstimateState)
    graph.add_node("load", load_node)
    graph.add_node("estimate", estimate_node)
    graph.add_node("inference", inference_node)
    graph.add_node("band", band_node)
    graph.add_node("write", write_node)

    graph.set_entry_point("load")
    graph.add_edge("load", "estimate")
    graph.add_edge("estimate", "inference")

    def to_band_or_write(state: EstimateState):
        return "band" if state.get("band_range") else "write"

    graph.add_conditional_edges("inference", to_band_or_write, {"band": "band", "write": "write"})
    graph.add_edge("band", "write")
    graph.set_finish_point("write")
    return graph.compile()


class EstimateRunner:
    """Thin wrapper around the compiled estimate pipeline."""
    def __init__(self):
        self.app = build_graph()

    def run(self, **inputs: Any) -> Dict[str, Any]:
        state: EstimateState = {k: v for k, v in inputs.items() if v is not None}  # type: ignore[assignment]
        return self.app.invoke(state, config={"configurable": {"thread_id": "cli"}})


graph = build_graph()
