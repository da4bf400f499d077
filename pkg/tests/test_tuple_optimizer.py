# tests/test_tuple_optimizer.py

import math

import pytest

from core.errors import TrainingError
from core.models import S11, S21, S22, TrialRecord
from core.tuples import LinearEdgeWindowParams
from pipeline.tuple_optimizer import (
    M_FACTORS,
    T_GRID,
    DifferencePool,
    approximate_cost,
    approximate_objective,
    difference_pools,
    optimize_tuple_params,
)


def test_difference_pools_order_and_counts():
    """B's tags come first at 11; deletable counts the first sequence."""
    trials = [
        TrialRecord(id=0, settings=S21, outcome_a=[1.0, 4.0], outcome_b=[1.1]),
        TrialRecord(id=1, settings=S11, outcome_a=[2.0], outcome_b=[2.25, 7.0]),
    ]
    pools = difference_pools(trials)
    assert pools["21"].deletable == 2
    assert pools["21"].diffs == [pytest.approx(0.1)]
    assert pools["11"].deletable == 2
    assert pools["11"].diffs == [pytest.approx(-0.25)]
    assert pools["22"].n_trials == 0


def test_approximate_cost():
    """Unmatched tags cost 1 each; matched differences cost the window value."""
    pool = DifferencePool(deletable=3, n_trials=1, diffs=[0.0, 0.2])
    params = LinearEdgeWindowParams.symmetric(0.05, 20.0)
    assert approximate_cost(pool, params, S21) == pytest.approx(2.0)
    empty = DifferencePool(deletable=4, n_trials=2)
    assert approximate_cost(empty, params, S22) == pytest.approx(4.0)


def test_optimizer_beats_every_grid_point(quantum_trials):
    """The returned window is no worse than any grid candidate on the approximate objective."""
    params = optimize_tuple_params(quantum_trials)
    pools = difference_pools(quantum_trials)
    chosen = approximate_objective(pools, params)
    assert math.isfinite(chosen)
    for t in T_GRID[::4]:
        for factor in M_FACTORS:
            candidate = LinearEdgeWindowParams.symmetric(float(t), factor / float(t))
            assert chosen <= approximate_objective(pools, candidate) + 1e-9


def test_optimizer_needs_every_setting(quantum_trials):
    """Missing settings classes or no trials at all raise TrainingError."""
    with pytest.raises(TrainingError):
        optimize_tuple_params([])
    without_22 = [t for t in quantum_trials if t.settings != S22]
    with pytest.raises(TrainingError) as excinfo:
        optimize_tuple_params(without_22)
    assert excinfo.value.setting == "22"
