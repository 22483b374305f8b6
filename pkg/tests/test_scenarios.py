from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate

from prevalent_cif.errors import ScenarioError
from prevalent_cif.study.scenarios import (
    ONSET_MODELS,
    GompertzParams,
    ScenarioConfig,
    baseline_mortality_sampler,
    ipw_identity_profile,
    sample_cohort,
)
from prevalent_cif.survival.cohort import RECORD_FIELDS, validate_cohort
from prevalent_cif.survival.estimators import aalen_johansen, new_cif


class TestScenarioGrammar:

    def test_from_code(self):
        cfg = ScenarioConfig.from_code(2111)
        assert cfg.code == "2111"
        assert cfg.family == 2
        assert cfg.post_diagnosis_mean == 2.5
        assert cfg.recruitment == "uniform"
        assert cfg.censor_offset == (11.0, 15.0)
        assert cfg.t1_model.truncation == 40

    def test_digits_select_settings(self):
        cfg = ScenarioConfig.from_code("3222")
        assert cfg.post_diagnosis_mean == 10.0
        assert cfg.recruitment == "ukb_like"
        assert cfg.censor_offset == (11.0, 25.0)
        assert cfg.t1_model.truncation is None

    @pytest.mark.parametrize("code", ["4111", "1311", "111", "21110", "abcd"])
    def test_bad_code(self, code):
        with pytest.raises(ScenarioError):
            ScenarioConfig.from_code(code)

    def test_bad_override(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig.from_code("2111", censor_offset=(20.0, 10.0))

    def test_from_mapping_settings(self):
        cfg = ScenarioConfig.from_mapping({"t1_setting": 1, "t2_setting": 2, "recruit_setting": 1, "censor_setting": 1})
        assert cfg.code == "1211"

    def test_from_mapping_overrides(self):
        cfg = ScenarioConfig.from_mapping({"code": "2111", "mortality": {"shape": 0.1, "rate": 1e-5}})
        assert cfg.mortality == GompertzParams(shape=0.1, rate=1e-5)

    def test_from_mapping_rejects_unknown_and_incomplete(self):
        with pytest.raises(ScenarioError, match="unknown"):
            ScenarioConfig.from_mapping({"code": "2111", "colour": "red"})
        with pytest.raises(ScenarioError):
            ScenarioConfig.from_mapping({"t1_setting": 1})

    def test_from_yaml(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text("code: '1122'\ncensor_offset: [10, 20]\n", encoding="utf-8")
        cfg = ScenarioConfig.from_yaml(path)
        assert cfg.code == "1122"
        assert cfg.censor_offset == (10.0, 20.0)

    def test_from_yaml_needs_mapping(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ScenarioError):
            ScenarioConfig.from_yaml(path)

    @pytest.mark.parametrize("code, expected", [
        ("3111", (35.0, 80.0)),
        ("1211", (50.0, 75.0)),
        ("2221", (50.0, 75.0)),
        ("1111", (50.0, 80.0)),
        ("2212", (50.0, 80.0)),
    ])
    def test_default_band_range(self, code, expected):
        assert ScenarioConfig.from_code(code).default_band_range == expected

    def test_config_hash(self):
        a, b = ScenarioConfig.from_code("2111"), ScenarioConfig.from_code("2111")
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != ScenarioConfig.from_code("2112").config_hash()
        assert ScenarioConfig.from_code("2111", n_draw_block=10).config_hash() == a.config_hash()


class TestLaws:

    def test_gompertz_defaults(self):
        g = GompertzParams()
        assert g.median == pytest.approx(82.0, abs=0.5)
        assert float(g.survival(95.0)) == pytest.approx(0.05, abs=0.01)

    def test_gompertz_quantile_inverts_survival(self):
        g = GompertzParams()
        v = np.array([0.99, 0.5, 0.1])
        npt.assert_allclose(g.survival(g.quantile_survival(v)), v, rtol=1e-10)

    def test_gompertz_pdf_integrates_to_cdf(self):
        g = GompertzParams()
        value, _ = integrate.quad(lambda t: float(g.pdf(t)), 0.0, 70.0)
        assert value == pytest.approx(float(g.cdf(70.0)), rel=1e-6)

    def test_baseline_sampler(self):
        g = GompertzParams()
        draws = baseline_mortality_sampler(g, seed=3, size=20000)
        assert np.median(draws) == pytest.approx(g.median, abs=0.5)
        assert isinstance(baseline_mortality_sampler(g, seed=3), float)

    def test_truncated_onset(self):
        onset = ONSET_MODELS[1]
        assert float(onset.survival(30.0)) == 1.0
        assert float(onset.survival(40.0)) == pytest.approx(1.0)
        assert float(onset.pdf(30.0)) == 0.0
        assert float(onset.quantile_survival(1.0)) == pytest.approx(40.0)

    def test_untruncated_onset_can_be_early(self):
        onset = ONSET_MODELS[3]
        assert float(onset.survival(39.0)) < 1.0

    @pytest.mark.parametrize("code", ["1111", "1121"])
    def test_recruitment_density(self, code):
        cfg = ScenarioConfig.from_code(code)
        value, _ = integrate.quad(lambda r: float(cfg.recruitment_pdf(r)), 40.0, 69.0, points=[60.0])
        assert value == pytest.approx(1.0, abs=1e-8)
        assert float(cfg.recruitment_pdf(39.0)) == 0.0

    def test_recruitment_quantile(self):
        assert float(ScenarioConfig.from_code("1111").recruitment_quantile(0.5)) == pytest.approx(54.5)
        ukb = ScenarioConfig.from_code("1121")
        assert float(ukb.recruitment_quantile(20.0 / 29.0)) == pytest.approx(60.0)
        q = ukb.recruitment_quantile(np.linspace(0, 1, 11))
        assert np.all(np.diff(q) > 0)


class TestSampleCohort:

    def test_deterministic(self):
        cfg = ScenarioConfig.from_code("2111")
        a, b = sample_cohort(cfg, 400, seed=12), sample_cohort(cfg, 400, seed=12)
        npt.assert_array_equal(a.v1, b.v1)
        npt.assert_array_equal(a.r, b.r)
        c = sample_cohort(cfg, 400, seed=13)
        assert not np.array_equal(a.v2, c.v2)

    def test_prefix_stable_in_n(self):
        cfg = ScenarioConfig.from_code("1112")
        small, large = sample_cohort(cfg, 100, seed=5), sample_cohort(cfg, 300, seed=5)
        npt.assert_array_equal(small.v2, large.v2[:100])

    @pytest.mark.parametrize("code", ["1111", "2122", "3211"])
    def test_records_pass_validation(self, code):
        cfg = ScenarioConfig.from_code(code)
        c = sample_cohort(cfg, 500, seed=1)
        assert len(c) == 500
        assert np.all((c.r >= 40) & (c.r <= 69))
        assert np.all(c.v2 >= c.r)
        again = validate_cohort(c.to_frame()[["id", *RECORD_FIELDS]], cfg.design)
        npt.assert_array_equal(again.v1, c.v1)

    def test_truncated_family_has_no_early_onsets(self):
        c = sample_cohort(ScenarioConfig.from_code("1111"), 500, seed=2)
        assert np.all(c.v1[c.delta1 == 1] >= 40)

    def test_small_block_size(self):
        cfg = ScenarioConfig.from_code("2111", n_draw_block=7)
        assert len(sample_cohort(cfg, 50, seed=0)) == 50

    def test_block_size_is_part_of_the_stream(self):
        a = ScenarioConfig.from_code("2111", n_draw_block=64)
        b = ScenarioConfig.from_code("2111", n_draw_block=256)
        npt.assert_array_equal(sample_cohort(a, 200, seed=9).v2, sample_cohort(a, 200, seed=9).v2)
        npt.assert_array_equal(sample_cohort(b, 200, seed=9).v2, sample_cohort(b, 200, seed=9).v2)
        assert not np.array_equal(sample_cohort(a, 200, seed=9).v2, sample_cohort(b, 200, seed=9).v2)

    def test_needs_positive_n(self):
        with pytest.raises(ScenarioError):
            sample_cohort(ScenarioConfig.from_code("2111"), 0, seed=0)


def test_ipw_identity_is_flat():
    cfg = ScenarioConfig.from_code("1111")
    c = sample_cohort(cfg, 5000, seed=4)
    frame = ipw_identity_profile(c, cfg, [50.0, 55.0, 60.0, 65.0, 70.0])
    assert list(frame.columns) == ["age", "khat", "p_observable", "product"]
    assert (frame["p_observable"] > 0).all()
    assert frame.attrs["relative_spread"] < 0.3


def test_early_onsets_move_new_estimate_only():
    c = sample_cohort(ScenarioConfig.from_code("3111"), 40_000, seed=6)
    early = (c.delta1 == 1) & (c.delta2 == 1) & (c.v1 <= 39.0)
    assert early.any()
    assert new_cif(c)(39.0) > 0.0
    aj = aalen_johansen(c)
    assert aj.mass_below(40.0) == 0.0
    assert aj(39.0) == 0.0


def test_bundled_scenario_file():
    path = Path(__file__).resolve().parents[1] / "scenarios" / "2121_long_followup.yaml"
    cfg = ScenarioConfig.from_yaml(path)
    assert cfg.code == "2121"
    assert cfg.recruitment == "ukb_like"
    assert cfg.censor_offset == (11.0, 25.0)
    assert cfg.config_hash() != ScenarioConfig.from_code("2121").config_hash()
