import numpy as np
import pytest

from saqe.data import AreaSample, CensusArea, CensusFrame, SurveySample


def make_survey(seed=0, n_areas=4, n_k=12, d=2, beta=None, sigma_v=1.0, sigma_e=1.0,
                intercept=3.0):
    """Small synthetic survey following the unit-level mixed model."""
    rng = np.random.default_rng(seed)
    beta = np.arange(1, d + 1, dtype=float) if beta is None else np.asarray(beta, float)
    areas = []
    for k in range(n_areas):
        x = rng.normal(0.0, 1.5, (n_k, d))
        v = rng.normal(0.0, sigma_v)
        y = intercept + x @ beta + v + rng.normal(0.0, sigma_e, n_k)
        areas.append(AreaSample(f"a{k}", x, y))
    return SurveySample(tuple(areas))


def make_census_for(sample, seed=0, N_k=40, link=True):
    """Census whose first n_k rows per area are the sampled units."""
    rng = np.random.default_rng(seed + 999)
    areas = []
    for a in sample.areas:
        extra = rng.normal(0.0, 1.5, (N_k - a.n, a.x.shape[1]))
        x = np.vstack([a.x, extra])
        areas.append(
            CensusArea(a.area_id, N_k, xbar=x.mean(axis=0), x=x,
                       sample_link=np.arange(a.n) if link else None)
        )
    return CensusFrame(tuple(areas))


@pytest.fixture
def survey():
    return make_survey()


@pytest.fixture
def census(survey):
    return make_census_for(survey)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiments")
