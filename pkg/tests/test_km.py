import numpy as np
import numpy.testing as npt
import pytest

from brute_force import km, step_at, synthetic_cohort
from prevalent_cif.errors import InferenceError, NoEventsError
from prevalent_cif.survival.cohort import Cohort
from prevalent_cif.survival.km import StepCurve, khat, km_left_truncated, risk_process


class TestStepCurve:

    @pytest.fixture
    def curve(self):
        return StepCurve([44.0, 46.0, 47.0], [0.75, 0.5, 0.25], 1.0)

    def test_right_continuous_and_left_limit(self, curve):
        assert curve(43.9) == 1.0
        assert curve(44.0) == 0.75
        assert curve.at_minus(44.0) == 1.0
        assert curve.at_minus(46.0) == 0.75
        npt.assert_array_equal(curve([0, 45, 47, 99]), [1.0, 0.75, 0.25, 0.25])

    def test_rejects_unsorted_knots(self):
        with pytest.raises(ValueError):
            StepCurve([2.0, 1.0], [0.1, 0.2])

    def test_restrict_and_compress(self, curve):
        assert curve.restrict(46.0).last_value == 0.5
        flat = StepCurve([1.0, 2.0, 3.0], [0.2, 0.2, 0.4])
        npt.assert_array_equal(flat.compress().knots, [1.0, 3.0])

    def test_frame_starts_at_age_zero(self, curve):
        frame = curve.to_frame("survival")
        assert frame["age"].iloc[0] == 0.0
        assert frame["survival"].iloc[0] == 1.0
        assert len(frame) == 4

    def test_combine_on_merged_knots(self):
        a = StepCurve([1.0, 3.0], [0.2, 0.4])
        b = StepCurve([2.0], [0.6])
        avg = a.combine(b, lambda x, y: 0.5 * x + 0.5 * y)
        npt.assert_array_equal(avg.knots, [1.0, 2.0, 3.0])
        npt.assert_allclose(avg.values, [0.1, 0.4, 0.5])


class TestRiskProcess:

    @pytest.fixture
    def three(self, design):
        v2 = np.array([50.0, 45.0, 46.0])
        return Cohort(v2, v2, [0, 0, 0], [1, 1, 0], [40.0, 42.0, 44.0], design)

    def test_counts(self, three):
        table = risk_process(three, "death")
        assert table.risk_count(45.0) == 3
        assert table.risk_count(49.0) == 1
        npt.assert_array_equal(table.ages, [45.0, 50.0])
        npt.assert_array_equal(table.at_risk, [3, 1])

    def test_single_subject_at_own_exit(self, design):
        c = Cohort([50.0], [50.0], [0], [1], [40.0], design)
        assert risk_process(c, "death").risk_count(50.0) == 1

    def test_no_events(self, design):
        c = Cohort([50.0, 52.0], [50.0, 52.0], [0, 0], [0, 0], [40.0, 41.0], design)
        with pytest.raises(NoEventsError):
            risk_process(c, "death")
        assert not risk_process(c, "death", allow_empty=True).has_events

    def test_first_event_excludes_prevalent(self, tied_cohort):
        table = risk_process(tied_cohort, "first_event")
        assert table.n == 4
        npt.assert_array_equal(table.cause_events, [1, 1, 0])


class TestKaplanMeier:

    def test_hand_values(self, death_cohort):
        s = km_left_truncated(risk_process(death_cohort, "death"))
        assert s(44) == pytest.approx(3 / 4)
        assert s(46) == pytest.approx(1 / 2)
        assert s(47) == pytest.approx(1 / 4)
        assert s(43) == 1.0

    def test_no_deaths_is_one(self, design):
        c = Cohort([50.0], [50.0], [0], [0], [40.0], design)
        s = km_left_truncated(risk_process(c, "death", allow_empty=True))
        assert s(99.0) == 1.0

    def test_complete_data_is_empirical_survivor(self, complete_cohort):
        s = km_left_truncated(risk_process(complete_cohort, "death"))
        ages = np.sort(complete_cohort.v2)
        empirical = 1.0 - np.arange(1, ages.size + 1) / ages.size
        npt.assert_allclose(s(ages), empirical, atol=1e-12)

    def test_matches_loop_version(self):
        c = synthetic_cohort(np.random.default_rng(7), 60)
        s = km_left_truncated(risk_process(c, "death"))
        ref = km(c.r, c.v2, c.delta2)
        for age, value in ref.items():
            assert s(age) == pytest.approx(value, abs=1e-12)
        assert s.is_nonincreasing()


class TestKHat:

    def test_hand_value(self, death_cohort):
        assert khat(death_cohort)(46.0) == pytest.approx(1.0)

    def test_single_subject(self, design):
        c = Cohort([50.0], [50.0], [0], [1], [40.0], design)
        assert khat(c)(50.0) == pytest.approx(1.0)

    def test_complete_data_is_one(self, complete_cohort):
        k = khat(complete_cohort)(complete_cohort.v2)
        npt.assert_allclose(k, 1.0, atol=1e-12)

    def test_empty_risk_set_rejected(self, death_cohort):
        with pytest.raises(InferenceError):
            khat(death_cohort)(30.0)

    def test_bounds_at_death_ages(self):
        c = synthetic_cohort(np.random.default_rng(11), 80)
        weight = khat(c)
        ages = np.unique(c.v2[c.delta2 == 1])
        s_minus = weight.survival.at_minus(ages)
        k = weight(ages)
        assert np.all(k >= s_minus - 1e-12)
        assert np.all(k <= len(c) * s_minus + 1e-12)

    def test_jump_identity(self):
        c = synthetic_cohort(np.random.default_rng(3), 120)
        weight = khat(c)
        ages = np.unique(c.v2[c.delta2 == 1])
        d_f2 = weight.survival.at_minus(ages) - weight.survival(ages)
        npt.assert_allclose(d_f2, weight(ages) / len(c), atol=1e-12)

    def test_loop_left_limit(self, death_cohort):
        ref = km(death_cohort.r, death_cohort.v2, death_cohort.delta2)
        assert step_at(ref, 47.0, left=True) == pytest.approx(0.5)
