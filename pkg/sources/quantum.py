# sources/quantum.py

import logging
import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import minimize

from core.bell import chsh_value
from core.models import (
    ALL_SETTINGS,
    OUTCOME_PAIRS,
    OutcomeProbabilities,
    PolarizerAngles,
    SettingsDistribution,
    SettingsPair,
    SourceConfig,
    TrialRecord,
)

logger = logging.getLogger(__name__)

CHSH_LR_BOUND = -2.0


def _pass_probabilities(theta, alpha, beta):
    """Joint and single pass probabilities for cos(theta)|00> + sin(theta)|11>."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    p_ab = (ct * ca * cb + st * sa * sb) ** 2
    p_a = ct ** 2 * ca ** 2 + st ** 2 * sa ** 2
    p_b = ct ** 2 * cb ** 2 + st ** 2 * sb ** 2
    return p_ab, p_a, p_b


def outcome_probabilities(theta: float, angles: PolarizerAngles, eta: float) -> OutcomeProbabilities:
    """
    Single-pair outcome probabilities with detection efficiency eta.

    p(11) = eta^2 P_AB, p(10) = eta P_A - eta^2 P_AB, p(01) = eta P_B -
    eta^2 P_AB and p(00) takes the remainder, so the marginals do not
    depend on the other party's setting.

    Args:
        theta: State angle
        angles: Polarizer angles per party and setting
        eta: Detection efficiency in [0, 1]

    Returns:
        OutcomeProbabilities with rows 11, 12, 21, 22.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must lie in [0, 1], got {eta}")
    rows = []
    for ab in ALL_SETTINGS:
        p_ab, p_a, p_b = _pass_probabilities(theta, angles.alpha(ab.a), angles.beta(ab.b))
        p11 = eta ** 2 * p_ab
        p10 = eta * p_a - p11
        p01 = eta * p_b - p11
        p00 = 1.0 - p11 - p10 - p01
        rows.append([max(p00, 0.0), max(p01, 0.0), max(p10, 0.0), max(p11, 0.0)])
    return OutcomeProbabilities(table=rows)


def source_probabilities(config: SourceConfig) -> OutcomeProbabilities:
    return outcome_probabilities(config.theta, config.angles, config.efficiency)


def _chsh_vectorized(x: np.ndarray, eta: float) -> np.ndarray:
    """CHSH value for parameter rows (theta, a1, a2, b1, b2)."""
    theta, a1, a2, b1, b2 = (x[..., i] for i in range(5))

    def correlator(alpha, beta):
        p_ab, p_a, p_b = _pass_probabilities(theta, alpha, beta)
        # no-click counts as -1: E = 1 - 2 P(outcomes differ)
        return 1.0 - 2.0 * (eta * p_a + eta * p_b - 2.0 * eta ** 2 * p_ab)

    return correlator(a2, b2) - correlator(a2, b1) - correlator(a1, b1) - correlator(a1, b2)


class SourceOptimum(BaseModel):
    """State and settings that (locally) minimize the CHSH value."""

    efficiency: float
    theta: float
    angles: PolarizerAngles
    probabilities: OutcomeProbabilities
    chsh: float
    violating: bool


def optimize_source(
    eta: float,
    grid_points: int = 9,
    n_starts: int = 4,
    tol: float = 1e-8,
) -> SourceOptimum:
    """
    Choose theta and polarizer angles minimizing the CHSH value at efficiency eta.

    A coarse grid over (theta, a1, a2, b1, b2) seeds Nelder-Mead runs from
    the best few points. Values below -2 violate the LR bound; above the
    2/3 efficiency threshold violation is achievable.

    Args:
        eta: Detection efficiency
        grid_points: Grid points per angle
        n_starts: Number of grid seeds refined with Nelder-Mead
        tol: Simplex tolerance on parameters and objective

    Returns:
        SourceOptimum; violating is False when no point beats -2.
    """
    thetas = np.linspace(0.0, math.pi / 2, 2 * grid_points - 1)
    angles = np.linspace(-math.pi / 2, math.pi / 2, grid_points)
    grid = np.stack(np.meshgrid(thetas, angles, angles, angles, angles, indexing="ij"), axis=-1).reshape(-1, 5)
    values = _chsh_vectorized(grid, eta)
    starts = grid[np.argsort(values)[:n_starts]]

    best_x, best_value = starts[0], float(np.min(values))
    for start in starts:
        res = minimize(
            lambda x: float(_chsh_vectorized(x, eta)),
            start,
            method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol, "maxiter": 20_000, "maxfev": 40_000},
        )
        if res.fun < best_value:
            best_x, best_value = res.x, float(res.fun)

    theta, a1, a2, b1, b2 = (float(v) for v in best_x)
    chosen = PolarizerAngles(a1=a1, a2=a2, b1=b1, b2=b2)
    probabilities = outcome_probabilities(theta, chosen, eta)
    chsh = chsh_value(probabilities)
    violating = chsh < CHSH_LR_BOUND - 1e-12
    if violating:
        logger.info("Optimized source at efficiency %.3f: CHSH %.6f", eta, chsh)
    else:
        logger.warning("No violation achievable at efficiency %.3f (best CHSH %.6f)", eta, chsh)
    return SourceOptimum(
        efficiency=eta,
        theta=theta,
        angles=chosen,
        probabilities=probabilities,
        chsh=chsh,
        violating=violating,
    )


def two_point_probabilities(
    theta: float, angles: PolarizerAngles, eta: float, emission: float = 1.0
) -> OutcomeProbabilities:
    """
    Click/no-click table of a trial that emits at most one pair.

    A pair is emitted with probability emission and then detected as in
    outcome_probabilities; otherwise neither party clicks.
    """
    if not 0.0 <= emission <= 1.0:
        raise ValueError(f"emission probability must lie in [0, 1], got {emission}")
    rows = []
    for row in outcome_probabilities(theta, angles, eta).table:
        scaled = [emission * p for p in row]
        scaled[0] += 1.0 - emission
        rows.append(scaled)
    return OutcomeProbabilities(table=rows)


def generate_two_point_trials(
    p: OutcomeProbabilities,
    n_trials: int,
    seed: int = 0,
    dist: Optional[SettingsDistribution] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Independent click/no-click trials drawn from an outcome table.

    Args:
        p: Settings-conditional outcome probabilities
        n_trials: Number of trials
        seed: Seed of the generator
        dist: Settings distribution (uniform by default)

    Returns:
        (settings, a, b): settings indices into ALL_SETTINGS and both
        parties' click bits, one entry per trial.
    """
    if n_trials < 0:
        raise ValueError("n_trials must be non-negative")
    dist = dist or SettingsDistribution()
    rng = np.random.default_rng(seed)
    settings = rng.choice(4, size=n_trials, p=np.asarray(dist.p.values()))
    cdf = np.cumsum(np.asarray(p.table, dtype=float), axis=1)
    u = rng.random(n_trials)
    pair = np.minimum((u[:, None] >= cdf[settings]).sum(axis=1), 3)
    bits = np.asarray(OUTCOME_PAIRS)[pair]
    return settings, bits[:, 0], bits[:, 1]


def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    """Independent per-trial substream."""
    return np.random.default_rng([int(seed), int(trial_id)])


def poisson_times(rng: np.random.Generator, rate: float, start: float, stop: float) -> np.ndarray:
    """Arrival times of a homogeneous Poisson process on [start, stop) by exponential gaps."""
    if rate <= 0 or stop <= start:
        return np.empty(0)
    span = stop - start
    expected = rate * span
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    times = start + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
    while times[-1] < stop:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        times = np.concatenate([times, more])
    return times[times < stop]


def clip_sorted(tags: np.ndarray, t_win: float) -> list:
    """Tags inside [0, t_win], sorted, as a list."""
    tags = np.sort(tags[(tags >= 0.0) & (tags <= t_win)])
    return tags.tolist()


def generate_quantum_trial(
    config: SourceConfig,
    settings: SettingsPair,
    trial_id: int = 0,
    seed: Optional[int] = None,
    probabilities: Optional[OutcomeProbabilities] = None,
) -> TrialRecord:
    """
    One trial of the jittery Poisson photon-pair source.

    Pairs arrive at rate config.pair_rate on [-lead, t_win]; each pair's
    outcome is drawn from the settings row of the outcome table, detected
    photons are delayed by independent jitter draws and tags outside
    [0, t_win] are dropped.

    Args:
        config: Source configuration
        settings: Settings pair of the trial
        trial_id: Trial index, selects the random substream
        seed: Master seed; config.seed when omitted
        probabilities: Outcome table; computed from config when omitted
    """
    rng = trial_rng(config.seed if seed is None else seed, trial_id)
    probabilities = probabilities or source_probabilities(config)
    arrivals = poisson_times(rng, config.pair_rate, -config.lead, config.t_win)
    row = probabilities.row(settings)
    outcomes = rng.choice(4, size=len(arrivals), p=row / row.sum())
    # outcome index = 2 * o_A + o_B
    a_times = arrivals[outcomes >= 2]
    b_times = arrivals[(outcomes % 2) == 1]
    a_tags = a_times + config.jitter.draw(rng, len(a_times))
    b_tags = b_times + config.jitter.draw(rng, len(b_times))
    return TrialRecord(
        id=trial_id,
        settings=settings,
        outcome_a=clip_sorted(a_tags, config.t_win),
        outcome_b=clip_sorted(b_tags, config.t_win),
    )
