# tests/conftest.py

import math

import pytest

from core.models import ALL_SETTINGS, JitterModel, PolarizerAngles, SourceConfig, TrialRecord
from core.tuples import LinearEdgeWindowParams, make_linear_edge_window
from sources.quantum import generate_quantum_trial

# Near-optimal state and angles at efficiency 0.8, so tests skip the source search.
TEST_THETA = 0.56
TEST_ANGLES = PolarizerAngles(a1=0.16, a2=-0.45, b1=-0.16, b2=0.45)


@pytest.fixture
def window_tuple():
    return make_linear_edge_window(LinearEdgeWindowParams.symmetric(0.05, 20.0))


@pytest.fixture
def source_config():
    return SourceConfig(
        efficiency=0.8,
        theta=TEST_THETA,
        angles=TEST_ANGLES,
        t_win=20.0,
        jitter=JitterModel(kind="uniform", width=0.02),
        seed=99,
    )


@pytest.fixture
def quantum_trials(source_config):
    """Forty trials cycling through the four settings pairs."""
    return [
        generate_quantum_trial(source_config, ALL_SETTINGS[i % 4], trial_id=i)
        for i in range(40)
    ]


@pytest.fixture
def fixed_trial():
    return TrialRecord(id=3, settings=ALL_SETTINGS[2], outcome_a=[0.5, 1.25, math.pi], outcome_b=[0.51, 3.2])
