import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from prevalent_cif.errors import CohortValidationError, EmptyCohortError
from prevalent_cif.survival.cohort import (
    Cohort,
    StudyDesign,
    SubjectClass,
    SubjectRecord,
    class_counts,
    classify,
    classify_subject,
    cohort_summary,
    restrict_t1_after,
    validate_cohort,
)


class TestStudyDesign:

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            StudyDesign(c_lower=50, c_upper=45, tau=80)
        with pytest.raises(ValueError):
            StudyDesign(c_lower=40, c_upper=80, tau=80)

    def test_frozen(self, design):
        with pytest.raises(Exception):
            design.tau = 90


class TestValidateCohort:

    def test_incident_and_prevalent_accepted(self, design):
        c = validate_cohort([(50, 60, 1, 1, 45), (35, 60, 1, 0, 45)], design)
        assert len(c) == 2
        assert classify(c).tolist() == ["incident", "prevalent"]

    def test_v1_after_v2_rejected(self, design):
        with pytest.raises(CohortValidationError) as exc:
            validate_cohort([(50, 48, 1, 1, 45)], design)
        rules = [rej.rule for rej in exc.value.rejections]
        assert "v1 > v2" in rules
        assert all(rej.row == 0 for rej in exc.value.rejections)

    def test_every_rule_reported_in_row_order(self, design):
        rows = [
            (50, 60, 1, 1, 45),
            (50, 60, 2, 1, 45),          # bad delta1
            (55, 60, 0, 1, 45),          # disease-free with v1 != v2
            (50, 60, 1, 1, 70),          # r > v2 and outside the window
            ("abc", 60, 1, 1, 45),       # non-numeric
        ]
        with pytest.raises(CohortValidationError) as exc:
            validate_cohort(rows, design)
        rej = exc.value.rejections
        assert [r.row for r in rej] == sorted(r.row for r in rej)
        assert {r.row for r in rej} == {1, 2, 3, 4}
        assert any(r.row == 3 and r.rule.startswith("r > v2") for r in rej)
        assert any(r.row == 3 and "recruitment window" in r.rule for r in rej)
        assert any(r.row == 4 and r.field == "v1" and "non-numeric" in r.rule for r in rej)
        assert exc.value.report_lines()[0].startswith("row 1:")

    def test_empty_input(self, design):
        with pytest.raises(EmptyCohortError):
            validate_cohort([], design)

    def test_wrong_width(self, design):
        with pytest.raises(CohortValidationError):
            validate_cohort([(50, 60, 1, 1)], design)

    def test_frame_input_keeps_ids_and_order(self, design):
        frame = pd.DataFrame({
            "id": ["a", "b", "c"],
            "v1": [61.0, 44.0, 50.0],
            "v2": [61.0, 52.0, 58.0],
            "delta1": [0, 1, 1],
            "delta2": [1, 1, 0],
            "r": [50.0, 41.0, 45.0],
        })
        c = validate_cohort(frame, design)
        assert c.ids.tolist() == ["a", "b", "c"]
        npt.assert_array_equal(c.v1, [61.0, 44.0, 50.0])
        assert validate_cohort(frame, design).to_frame().equals(c.to_frame())

    def test_cohort_is_read_only(self, aj_cohort):
        with pytest.raises(AttributeError):
            aj_cohort.v1 = np.zeros(4)
        with pytest.raises(ValueError):
            aj_cohort.v1[0] = 1.0


class TestClassify:

    @pytest.mark.parametrize("record, expected", [
        ((36, 70, 1, 1, 45), SubjectClass.PREVALENT),
        ((46, 46, 1, 0, 44), SubjectClass.INCIDENT),
        ((65, 65, 0, 1, 50), SubjectClass.DIED_DISEASE_FREE),
        ((65, 65, 0, 0, 50), SubjectClass.ALIVE_DISEASE_FREE),
    ])
    def test_classify_subject(self, record, expected):
        v1, v2, d1, d2, r = record
        assert classify_subject(SubjectRecord(v1=v1, v2=v2, delta1=d1, delta2=d2, r=r)) is expected

    def test_counts_partition_the_cohort(self, tied_cohort):
        counts = class_counts(tied_cohort)
        assert sum(counts.values()) == len(tied_cohort)
        assert counts["prevalent"] == 1
        assert counts["incident"] == 2

    def test_vectorised_matches_per_subject(self, tied_cohort):
        expected = [classify_subject(s).value for s in tied_cohort.subjects]
        assert classify(tied_cohort).tolist() == expected


class TestRestrict:

    @pytest.fixture
    def ten(self, design):
        # three onsets before 40, all prevalent
        v1 = [36, 38, 39, 45, 50, 55, 60, 62, 70, 72]
        v2 = [60, 61, 66, 70, 58, 57, 65, 62, 70, 72]
        d1 = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0]
        d2 = [1, 0, 1, 1, 1, 0, 1, 0, 1, 0]
        r = [45, 50, 42, 44, 48, 46, 52, 55, 60, 66]
        return Cohort(v1, v2, d1, d2, r, design)

    def test_drops_early_onsets(self, ten):
        assert len(restrict_t1_after(ten, 40)) == 7

    def test_zero_threshold_is_identity(self, ten):
        assert restrict_t1_after(ten, 0) is ten

    def test_idempotent(self, ten):
        once = restrict_t1_after(ten, 40)
        twice = restrict_t1_after(once, 40)
        npt.assert_array_equal(once.v1, twice.v1)

    def test_negative_threshold(self, ten):
        with pytest.raises(ValueError):
            restrict_t1_after(ten, -1)

    def test_empty_result(self, design):
        c = Cohort([36.0], [60.0], [1], [1], [45.0], design)
        with pytest.raises(EmptyCohortError):
            restrict_t1_after(c, 40)


def test_cohort_summary(tied_cohort):
    s = cohort_summary(tied_cohort)
    assert s["n"] == 5
    assert s["died_with_disease"] == 3
    assert s["died_without_disease"] == 1
    assert s["alive_without_disease"] == 1
    assert s["alive_with_disease"] == 0
    assert s["prevalent_below_c_lower"] == 0
    assert s["prevalent_at_or_above_c_lower"] == 1
    assert s["incident"] == 2
    assert s["min_onset_prevalent"] == 48.0
    assert s["min_onset_incident"] == 45.0
