# tests/test_snr.py

import math

import numpy as np
import pytest

from core.errors import TrainingError
from core.models import ALL_SETTINGS, S11, S12, S22, PerSetting
from inference.snr import SNRState, estimate_snr, naive_snr


def test_naive_snr_formula():
    """f = sum b, sigma_e^2 = N sum (b - f/N)^2 / (N - 1), SNR = -f / sigma_e."""
    result = naive_snr([1.0, 2.0, 3.0])
    assert result.b_tot == 6.0
    assert result.v_hat == pytest.approx(3.0)
    assert result.snr == pytest.approx(-6.0 / math.sqrt(3.0))
    assert naive_snr([-1.0, -3.0]).snr > 0


def test_naive_snr_needs_two_values():
    """A single value has no spread."""
    with pytest.raises(ValueError):
        naive_snr([1.0])


def test_fixed_predictions():
    """With zero predictions the estimate is the plain sum and v the sum of squares."""
    result = estimate_snr([], [(S11, -1.0), (S22, -1.0)], predictions=PerSetting.uniform(0.0))
    assert result.b_tot == pytest.approx(-2.0)
    assert result.v_hat == pytest.approx(2.0)
    assert result.snr == pytest.approx(math.sqrt(2.0))
    assert result.n == 2


def test_running_means_predict_before_update():
    """Each analysis trial is scored against predictions from earlier trials only."""
    training = [(ab, 1.0) for ab in ALL_SETTINGS]
    result = estimate_snr(training, [(S11, 3.0)])
    # delta = 3 - 1, predicted total = sum_ab 0.25 * 1
    assert result.b_tot == pytest.approx(3.0)
    assert result.v_hat == pytest.approx(4.0)
    assert result.snr == pytest.approx(-1.5)


def test_missing_settings_class_raises():
    """Training must cover every settings pair unless predictions are fixed."""
    training = [(S11, 1.0), (S12, 1.0), (S22, 1.0)]
    with pytest.raises(TrainingError) as excinfo:
        estimate_snr(training, [(S11, 0.0)])
    assert excinfo.value.setting == "21"
    # fixed predictions need no training
    assert estimate_snr([], [(S11, 0.0)], predictions=PerSetting.uniform(0.0)).n == 1


def test_zero_variance_edge_cases():
    """No analysis trials give SNR 0; an exact nonzero estimate gives an infinite SNR."""
    state = SNRState(fixed=PerSetting.uniform(-1.0))
    assert state.result().snr == 0.0
    state.update(S11, -1.0)
    assert state.result().v_hat == 0.0
    assert state.result().snr == math.inf


def test_estimate_is_nearly_unbiased():
    """Over repeated experiments the mean estimate matches n E[B] and v_hat does not undershoot."""
    rng = np.random.default_rng(21)
    means = {ab: (5.0 if ab == S22 else 1.0) for ab in ALL_SETTINGS}
    n, reps = 60, 300
    totals, variances = [], []
    for _ in range(reps):
        training = [(ab, means[ab] + rng.standard_normal()) for ab in ALL_SETTINGS for _ in range(10)]
        picks = rng.integers(4, size=n)
        analysis = [(ALL_SETTINGS[i], means[ALL_SETTINGS[i]] + rng.standard_normal()) for i in picks]
        result = estimate_snr(training, analysis)
        totals.append(result.b_tot)
        variances.append(result.v_hat)
    expected = n * sum(0.25 * m for m in means.values())
    stderr = np.std(totals, ddof=1) / math.sqrt(reps)
    assert abs(np.mean(totals) - expected) <= 4.0 * stderr
    assert np.mean(variances) >= 0.8 * np.var(totals, ddof=1)
