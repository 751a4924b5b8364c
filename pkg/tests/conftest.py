import numpy as np
import pytest

from battery import PriceScenario, TargetSpec, case_study_params, case_study_target
from ingest import SynthSpec, synth_scenarios


@pytest.fixture
def params():
    return case_study_params()


@pytest.fixture
def target():
    return case_study_target()


@pytest.fixture
def full_band():
    """Band covering the whole capacity, so the SoC requirement never binds."""
    def make(horizon=24, rho=10.0):
        return TargetSpec(band_lo=0.0, band_hi=10.0, e_target=5.0, rho=rho, epsilon=0.05,
                          critical_hours=(horizon,))
    return make


@pytest.fixture
def scenario():
    def make(prices, id='s', features=None):
        return PriceScenario(prices=np.asarray(prices, dtype=float), features=features, id=id)
    return make


@pytest.fixture
def synth_table():
    return synth_scenarios(SynthSpec(days=30, seed=1))
