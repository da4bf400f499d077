# tests/test_lr_source.py

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from core.bell import pr_box_probabilities
from core.models import ALL_SETTINGS, S11, S12, S21, S22, JitterModel, PolarizerAngles, SourceConfig
from sources.lr_source import (
    TriangleDensity,
    adjust_template,
    build_template,
    calibrate_delta_c,
    decompose_template,
    generate_lr_assignment,
    generate_lr_trial,
    hidden_rates,
    triangle_eval,
    triangle_sample,
)
from sources.quantum import outcome_probabilities


def _config(**overrides) -> SourceConfig:
    base = dict(
        efficiency=1.0,
        theta=math.pi / 4,
        angles=PolarizerAngles(),
        t_win=40.0,
        jitter=JitterModel(kind="uniform", width=0.11),
        seed=2024,
    )
    base.update(overrides)
    return SourceConfig(**base)


def _target():
    return outcome_probabilities(math.pi / 4, PolarizerAngles(), 1.0)


def test_triangle_density():
    """Peak 1/w at zero, zero outside [-w, w], unit mass."""
    J = TriangleDensity(width=0.5)
    assert triangle_eval(J, 0.0) == pytest.approx(2.0)
    assert triangle_eval(J, 0.6) == 0.0
    x = np.linspace(-0.5, 0.5, 20_001)
    assert trapezoid(triangle_eval(J, x), x) == pytest.approx(1.0, abs=1e-6)
    draws = triangle_sample(J, np.random.default_rng(0), 10_000)
    assert np.all(np.abs(draws) <= 0.5)
    assert abs(np.mean(draws)) < 0.02


def test_decomposition_recombines_exactly():
    """lambda_lr p_lr + lambda_pr p_pr reproduces p' and the weights sum to 1."""
    template = build_template(_target())
    np.testing.assert_allclose(template.recombined(), template.p_prime.as_array(), atol=1e-9)
    assert template.lambda_lr + template.lambda_pr == pytest.approx(1.0)
    # the target violates, so it cannot be purely local
    assert template.lambda_pr > 0
    assert template.p_lr.signaling_gap() == pytest.approx(0.0, abs=1e-9)


def test_pr_box_is_all_pr():
    """The PR box has no local part."""
    lambda_lr, q, lambda_pr = decompose_template(pr_box_probabilities())
    assert lambda_lr == pytest.approx(0.0, abs=1e-9)
    assert lambda_pr == pytest.approx(1.0)
    assert len(q) == 16


def test_adjust_template_keeps_marginals():
    """delta_c shifts 22 weight to 00 and 11 without changing any marginal."""
    p = _target()
    adjusted = adjust_template(p, 0.05)
    for ab in ALL_SETTINGS:
        assert adjusted.marginal_a(ab) == pytest.approx(p.marginal_a(ab))
        assert adjusted.marginal_b(ab) == pytest.approx(p.marginal_b(ab))
    assert adjusted.prob(S22, 1, 1) == pytest.approx(p.prob(S22, 1, 1) + 0.05)
    with pytest.raises(ValueError):
        adjust_template(p, 1.0)
    with pytest.raises(ValueError):
        adjust_template(p, -0.01)


def test_larger_delta_c_shrinks_pr_weight():
    """Moving weight to the 22 diagonal reduces the PR component."""
    p = _target()
    assert build_template(p, 0.05).lambda_pr < build_template(p, 0.0).lambda_pr


def test_hidden_rates_isolated_and_crowded():
    """Isolated tags get equal rates; crowded tags keep the partner intensity bounded."""
    template = build_template(_target())
    j_u = 0.11
    isolated = hidden_rates(np.array([1.0, 5.0, 9.0]), template, j_u)
    assert isolated[0] > 0
    assert np.allclose(isolated, isolated[0])
    assert len(hidden_rates(np.empty(0), template, j_u)) == 0

    tags = np.sort(np.random.default_rng(3).uniform(0.0, 3.0, 40))
    rates = hidden_rates(tags, template, j_u)
    assert np.all(rates >= 0)
    kernel = TriangleDensity(width=3.0 * j_u)
    grid = np.linspace(-1.0, 4.0, 4001)
    intensity = (rates[None, :] * triangle_eval(kernel, grid[:, None] - tags[None, :])).sum(axis=1)
    assert np.max(intensity) <= template.p_prime.prob(S22, 0, 1) + 1e-6


def test_lr_trial_outcomes_ignore_remote_setting():
    """A's tags depend only on A's setting; the assignment exists before settings are chosen."""
    config = _config()
    template = build_template(_target())
    at_11 = generate_lr_trial(template, config, S11, trial_id=6)
    at_12 = generate_lr_trial(template, config, S12, trial_id=6)
    at_21 = generate_lr_trial(template, config, S21, trial_id=6)
    assert at_11.outcome_a == at_12.outcome_a
    assert at_11.outcome_b == at_21.outcome_b
    assignment = generate_lr_assignment(template, config, trial_id=6)
    assert at_21.outcome_a == assignment.d_a2
    for tags in (assignment.d_a1, assignment.d_a2, assignment.d_b1, assignment.d_b2):
        assert tags == sorted(tags)
        assert all(0.0 <= t <= config.t_win for t in tags)


def test_lr_source_rates_track_target():
    """The A2 stream arrives at the target marginal rate."""
    config = _config(t_win=4000.0)
    template = build_template(_target())
    assignment = generate_lr_assignment(template, config, trial_id=1)
    expected = template.p_prime.marginal_a(S22) * config.t_win
    assert abs(len(assignment.d_a2) - expected) < 5 * math.sqrt(expected)


def test_lr_source_requires_uniform_jitter():
    """Only uniform jitter is mimicked."""
    config = _config(jitter=JitterModel(kind="exponential", rate=10.0))
    template = build_template(_target())
    with pytest.raises(ValueError):
        generate_lr_assignment(template, config)
    with pytest.raises(ValueError):
        calibrate_delta_c(config)


def test_calibration_report_is_consistent():
    """The report matches its template and flags whether the hidden rate suffices."""
    config = _config()
    template, report = calibrate_delta_c(config, span=300.0, iterations=4)
    assert report.j_u == pytest.approx(0.11)
    assert report.delta_c == template.delta_c
    assert report.lambda_pr == pytest.approx(template.lambda_pr)
    assert report.required_rate == pytest.approx(template.lambda_pr / 2.0)
    if report.feasible:
        assert report.achieved_rate >= report.required_rate * (1.0 - 1e-3)
    else:
        assert report.achieved_rate < report.required_rate
