import numpy as np
import pytest

from prevalent_cif.survival.cohort import Cohort, StudyDesign


@pytest.fixture
def design():
    return StudyDesign(c_lower=40, c_upper=69, tau=80)


@pytest.fixture
def death_cohort(design):
    # r=(40,40,41,43), v2=(44,46,47,47), deaths at 44, 46, 47; no disease
    v2 = np.array([44.0, 46.0, 47.0, 47.0])
    return Cohort(v2, v2, [0, 0, 0, 0], [1, 1, 1, 0], [40.0, 40.0, 41.0, 43.0], design)


@pytest.fixture
def aj_cohort(design):
    # onsets at 44 and 45 (incident), disease-free death at 46, censored at 50
    return Cohort(
        v1=[44.0, 46.0, 45.0, 50.0],
        v2=[55.0, 46.0, 60.0, 50.0],
        delta1=[1, 0, 1, 0],
        delta2=[0, 1, 1, 0],
        r=[40.0, 40.0, 41.0, 43.0],
        design=design,
    )


@pytest.fixture
def single_path_cohort(design):
    # one disease-then-death path: onset 45, death 50
    return Cohort(
        v1=[45.0, 44.0, 47.0, 52.0],
        v2=[50.0, 44.0, 47.0, 52.0],
        delta1=[1, 0, 0, 0],
        delta2=[1, 1, 0, 1],
        r=[40.0, 40.0, 41.0, 43.0],
        design=design,
    )


@pytest.fixture
def tied_cohort(design):
    # two deaths tied at 60 with onsets 45 and 50, plus three other subjects
    return Cohort(
        v1=[45.0, 50.0, 55.0, 62.0, 48.0],
        v2=[60.0, 60.0, 55.0, 62.0, 70.0],
        delta1=[1, 1, 0, 0, 1],
        delta2=[1, 1, 1, 0, 1],
        r=[42.0, 44.0, 41.0, 50.0, 50.0],
        design=design,
    )


@pytest.fixture
def complete_design():
    return StudyDesign(c_lower=0.5, c_upper=0.5, tau=1000)


@pytest.fixture
def complete_cohort(complete_design):
    """Recruitment at 0.5 for everybody, no censoring, distinct ages."""
    rng = np.random.default_rng(20240611)
    n = 1000
    t1 = rng.uniform(1, 100, n)
    t2 = rng.uniform(1, 100, n)
    diseased = rng.random(n) < 0.5
    t2 = np.where(diseased, t1 + rng.exponential(5.0, n), t2)
    v1 = np.where(diseased, t1, t2)
    return Cohort(v1, t2, diseased.astype(int), np.ones(n, dtype=int), np.full(n, 0.5), complete_design)
