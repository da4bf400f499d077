# tests/test_truncation.py

import numpy as np
import pytest

from core.bell import BellFunction, BinaryTableCH, TupleDistanceCH, lr_oracle
from core.errors import TruncationError
from core.models import ALL_SETTINGS, S11, S22, PerSetting, SettingsDistribution
from inference.truncation import (
    TruncatedCH,
    build_candidates,
    choose_truncation,
    make_test_factor,
)


def _violating_values(seed: int = 0, n: int = 400):
    """Training CH values whose means violate: l_11 + l_12 + l_21 - l_22 < 0."""
    rng = np.random.default_rng(seed)
    means = {ALL_SETTINGS[0]: 1.0, ALL_SETTINGS[1]: 1.0, ALL_SETTINGS[2]: 1.0, S22: 3.6}
    return {ab: list(means[ab] + 0.5 * rng.standard_normal(n)) for ab in ALL_SETTINGS}


def test_choose_truncation_balances_violation():
    """After truncation the training means sit at -+S/4 and u is exact."""
    values = _violating_values()
    params = choose_truncation(values, PerSetting.uniform(1.0))
    assert params.helpful
    assert params.u.c.is_exact()
    assert params.b.c.is_exact()
    for ab in ALL_SETTINGS:
        shifted = float(np.mean(params.g(ab, values[ab])))
        target = -params.v if ab != S22 else params.v
        assert shifted == pytest.approx(target, abs=1e-9)


def test_truncation_not_helpful_without_violation(caplog):
    """Non-violating training data gives v <= 0 and a warning."""
    rng = np.random.default_rng(1)
    values = {ab: list(1.0 + 0.1 * rng.standard_normal(200)) for ab in ALL_SETTINGS}
    params = choose_truncation(values, PerSetting.uniform(1.0))
    assert not params.helpful
    assert "not helpful" in caplog.text


def test_choose_truncation_rejects_empty_class():
    """Every settings class needs training values."""
    values = _violating_values()
    values[S11] = []
    with pytest.raises(TruncationError):
        choose_truncation(values, PerSetting.uniform(1.0))


def test_bell_bound_and_test_factor():
    """z bounds the truncated Bell function and R = (z - B) / z stays non-negative."""
    values = _violating_values()
    base = BinaryTableCH.from_callable(lambda ab, x, y: 4.0 * abs(x - y))
    params = choose_truncation(values, PerSetting.uniform(1.0))
    factor = make_test_factor(BellFunction(l=TruncatedCH(base=base, params=params)))
    dist = SettingsDistribution()
    z = params.bell_bound(dist)
    assert factor.z == pytest.approx(z)
    for ab in ALL_SETTINGS:
        grid = np.linspace(-10.0, 20.0, 301)
        bell = ab.sign * params.g(ab, grid) / dist.prob(ab)
        assert np.all(bell <= z + 1e-12)
        r = factor.from_base_values([ab] * len(grid), grid)
        assert np.all(r >= -1e-12)


def test_test_factor_has_lr_expectation_at_most_one():
    """Truncated CH Bell functions stay non-negative under LR, so E[R] <= 1."""
    base = BinaryTableCH.from_callable(lambda ab, x, y: 4.0 * abs(x - y))
    params = choose_truncation(_violating_values(), PerSetting.uniform(1.0))
    bell = BellFunction(l=TruncatedCH(base=base, params=params))
    factor = make_test_factor(bell)
    minimum = lr_oracle(bell, [0, 1]).minimum
    assert minimum >= -1e-9
    assert (factor.z - minimum) / factor.z <= 1.0 + 1e-9


def test_make_test_factor_needs_truncation(window_tuple):
    """Untruncated Bell functions have no bound and are refused."""
    with pytest.raises(TruncationError):
        make_test_factor(BellFunction(l=TupleDistanceCH(f=window_tuple)))


def test_build_candidates_predicted_gain_is_bounded():
    """Every candidate predicts a per-trial factor of at most 4/3 and satisfies u_22 >= 3v."""
    base = BinaryTableCH.from_callable(lambda ab, x, y: 4.0 * abs(x - y))
    values = _violating_values(seed=2)
    candidates = build_candidates(base, values)
    assert candidates
    for candidate in candidates:
        assert candidate.predicted_mean() <= 4.0 / 3.0 + 1e-12
        assert candidate.params.u.c[S22] >= 3.0 * candidate.params.v - 1e-12
        assert candidate.params.v > 0


def test_from_base_values_matches_evaluate(quantum_trials, window_tuple):
    """Precomputed base values give the same factors as evaluating each trial."""
    base = TupleDistanceCH(f=window_tuple)
    values = {ab: [] for ab in ALL_SETTINGS}
    for t in quantum_trials:
        values[t.settings].append(base.tilde(t.settings, t.outcome_a, t.outcome_b))
    w = PerSetting.from_values([float(np.std(values[ab])) for ab in ALL_SETTINGS])
    try:
        params = choose_truncation(values, w)
        factor = make_test_factor(BellFunction(l=TruncatedCH(base=base, params=params)))
    except TruncationError:
        pytest.skip("no valid truncation on this sample")
    settings = [t.settings for t in quantum_trials]
    base_values = [base.tilde(t.settings, t.outcome_a, t.outcome_b) for t in quantum_trials]
    fast = factor.from_base_values(settings, base_values)
    slow = np.array([factor.evaluate(t) for t in quantum_trials])
    np.testing.assert_allclose(fast, slow, atol=1e-12)
