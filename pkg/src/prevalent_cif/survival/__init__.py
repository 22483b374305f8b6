"""Cumulative incidence estimation from left-truncated, right-censored illness-death cohorts."""

from .cohort import Cohort, StudyDesign, SubjectClass, SubjectRecord, validate_cohort
from .estimators import CifEstimate, EstimandTag, aalen_johansen, combination_cif, new_cif, tie_general_cif
from .inference import InfluenceMatrix, Transform, influence_aj, influence_new, multiplier_band, pointwise_ci, variance_curve
from .km import StepCurve, khat, km_left_truncated, risk_process

__all__ = [
	"Cohort",
	"StudyDesign",
	"SubjectClass",
	"SubjectRecord",
	"validate_cohort",
	"CifEstimate",
	"EstimandTag",
	"aalen_johansen",
	"combination_cif",
	"new_cif",
	"tie_general_cif",
	"InfluenceMatrix",
	"Transform",
	"influence_aj",
	"influence_new",
	"multiplier_band",
	"pointwise_ci",
	"variance_curve",
	"StepCurve",
	"khat",
	"km_left_truncated",
	"risk_process",
]
