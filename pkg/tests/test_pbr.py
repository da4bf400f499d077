# tests/test_pbr.py

import math

import numpy as np
import pytest

from core.errors import InvariantBreachError
from core.models import ALL_SETTINGS
from inference.pbr import PBRState, logp_to_sigma, optimize_weights, pbr_run, sigma_to_logp
from inference.snr import SNRState, estimate_snr


def test_constant_factor_bound():
    """Ten trials with a constant 4/3 factor give p <= (3/4)^10."""
    values = np.column_stack([np.ones(10), np.full(10, 4.0 / 3.0)])
    result = pbr_run(values, training=values, block_size=5)
    assert result.p_bound == pytest.approx(0.75 ** 10, rel=1e-6)
    assert result.log_p == pytest.approx(10 * math.log2(4.0 / 3.0), rel=1e-6)
    assert len(result.blocks) == 2
    assert len(result.trajectory) == 10


def test_trivial_factor_without_training():
    """With no training rows the first block runs on the trivial factor and gains nothing."""
    values = np.column_stack([np.ones(4), np.full(4, 2.0)])
    result = pbr_run(values, block_size=4)
    assert result.log_p == 0.0
    assert result.blocks[0].weights == [1.0, 0.0]


def test_weights_refit_after_each_block():
    """Later blocks use weights fitted on the earlier analysis trials."""
    values = np.column_stack([np.ones(6), np.full(6, 1.5)])
    result = pbr_run(values, block_size=2)
    assert result.blocks[0].weights[0] == 1.0
    assert result.blocks[1].weights[1] == pytest.approx(1.0, abs=1e-6)
    assert result.log_p == pytest.approx(4 * math.log2(1.5), rel=1e-5)


def test_log_p_is_clamped_at_zero():
    """A losing factor drives the raw product below 1 but the reported bound stays at p = 1."""
    values = np.column_stack([np.ones(5), np.full(5, 0.5)])
    result = pbr_run(values, training=np.column_stack([np.ones(3), np.full(3, 1.2)]), block_size=10)
    assert result.log_p_raw < 0
    assert result.log_p == 0.0
    assert result.p_bound == 1.0


def test_stop_after_freezes_bound():
    """After the stopping trial every factor counts as 1."""
    values = np.column_stack([np.ones(10), np.full(10, 4.0 / 3.0)])
    result = pbr_run(values, training=values, block_size=100, stop_after=4)
    assert result.log_p == pytest.approx(4 * math.log2(4.0 / 3.0), rel=1e-6)
    assert result.trajectory[-1] == result.trajectory[3]


def test_negative_factor_raises():
    """A negative test factor breaches the invariant and names the candidate."""
    values = np.array([[1.0, 0.5], [1.0, -0.1]])
    with pytest.raises(InvariantBreachError) as excinfo:
        pbr_run(values)
    assert excinfo.value.candidate == 0


def test_optimize_weights_prefers_trivial_on_ties():
    """When no candidate beats the trivial factor the trivial weight is returned."""
    values = np.column_stack([np.ones(20), np.where(np.arange(20) % 2 == 0, 1.5, 0.5)])
    w = optimize_weights(values)
    assert w.tolist() == [1.0, 0.0]


def test_optimize_weights_mixes_candidates():
    """Weights are convex and improve the mean log factor over the trivial choice."""
    rng = np.random.default_rng(4)
    values = np.column_stack([np.ones(200), rng.uniform(0.6, 1.8, 200), rng.uniform(0.9, 1.3, 200)])
    w = optimize_weights(values)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0)
    assert np.mean(np.log2(values @ w)) > 0


def test_state_step_accumulates():
    """PBRState adds log2 of each mixed factor."""
    state = PBRState(weights=[0.5, 0.5])
    state.step(np.array([1.0, 3.0]))
    assert state.log_p == pytest.approx(1.0)
    assert state.processed == 1


def test_sigma_conversion_round_trip():
    """log-p and sigma convert into each other; non-positive inputs map to zero."""
    assert logp_to_sigma(0.0) == 0.0
    assert sigma_to_logp(-1.0) == 0.0
    assert logp_to_sigma(sigma_to_logp(5.0)) == pytest.approx(5.0, rel=1e-9)
    # p = 2^-1 is the median: one bit of evidence is zero sigma
    assert logp_to_sigma(1.0) == pytest.approx(0.0, abs=1e-12)
    assert logp_to_sigma(2000.0) > 30.0


@pytest.mark.parametrize("logp, sigma", [(2.7, 1), (5.0, 2), (9.5, 3), (14.9, 4), (21.7, 5)])
def test_reference_logp_values_match_sigmas(logp, sigma):
    """The usual log-p landmarks sit at whole standard deviations."""
    assert round(logp_to_sigma(logp)) == sigma


def test_initial_weights_seed_first_block():
    """Given weights are used for the first block instead of a fit on training."""
    values = np.column_stack([np.ones(4), np.full(4, 4.0 / 3.0)])
    result = pbr_run(values, block_size=2, initial_weights=[0.0, 1.0])
    assert result.blocks[0].weights == [0.0, 1.0]
    assert result.blocks[0].log_p == pytest.approx(2 * math.log2(4.0 / 3.0))
    # without them the empty training fit falls back to the trivial factor
    assert pbr_run(values, block_size=2).blocks[0].weights == [1.0, 0.0]


@pytest.mark.parametrize("weights", [[1.0], [0.5, 0.6], [-0.5, 1.5]])
def test_initial_weights_must_fit_columns(weights):
    """Initial weights need one convex coefficient per factor column."""
    values = np.column_stack([np.ones(4), np.full(4, 1.1)])
    with pytest.raises(ValueError):
        pbr_run(values, initial_weights=weights)


def test_blocks_record_running_snr():
    """Each block carries the adaptive SNR of the Bell values seen so far."""
    settings = [ALL_SETTINGS[k % 4] for k in range(12)]
    bell = [(ab, float((k * 7) % 5) - 2.5) for k, ab in enumerate(settings)]
    training = [(ab, 1.0 - 0.5 * i) for i, ab in enumerate(ALL_SETTINGS)]
    state = SNRState()
    state.seed(training)
    values = np.column_stack([np.ones(12), np.full(12, 1.1)])
    result = pbr_run(values, block_size=5, snr=state, bell=bell)
    assert len(result.blocks) == 3
    assert result.blocks[0].snr == pytest.approx(estimate_snr(training, bell[:5]).snr)
    assert result.blocks[-1].snr == pytest.approx(estimate_snr(training, bell).snr)
    assert pbr_run(values, block_size=5).blocks[0].snr is None
    with pytest.raises(ValueError):
        pbr_run(values, snr=SNRState(), bell=bell[:3])
