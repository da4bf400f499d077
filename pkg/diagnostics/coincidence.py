# diagnostics/coincidence.py

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from core.bell import AdjustedCH, BellFunction, TupleDistanceCH, standard_count_adjustment
from core.distance import min_cost
from core.models import S11, S12, S21, SettingsDistribution, SettingsPair, TrialRecord
from core.tuples import conventional_window
from inference.snr import BellObservation, SNRResult, estimate_snr, naive_snr

logger = logging.getLogger(__name__)

WINDOW_GRID_MIN = 1e-3
WINDOW_GRID_MAX = 2.0
WINDOW_GRID_POINTS = 48
WINDOW_REFINE_POINTS = 25
PLATEAU_TOL = 1.0  # SNR units


def count_coincidences(r: Sequence[float], t: Sequence[float], w: float) -> Tuple[int, List[Tuple[int, int]]]:
    """
    Maximum number of one-to-one pairs with |t_l - r_k| < w.

    Runs the distance DP with the equal-width window [|x| >= w], whose cost
    is len(r) minus the number of in-window pairs.

    Returns:
        (count, pairs) with 1-based indices of the in-window pairs.
    """
    if w <= 0:
        raise ValueError("coincidence window must be positive")
    result = min_cost(conventional_window(w), S12, r, t)
    pairs = [(k, l) for k, l in result.matching.pairs if abs(t[l - 1] - r[k - 1]) < w]
    return len(pairs), pairs


def fast_coincidence_count(r: Sequence[float], t: Sequence[float], w: float, inclusive: bool = False) -> int:
    """
    Greedy left-to-right count; equals count_coincidences for sorted inputs.

    inclusive=True counts pairs with |t_l - r_k| <= w instead of < w.
    """
    i = j = count = 0
    m, n = len(r), len(t)
    while i < m and j < n:
        d = t[j] - r[i]
        if d > w or (d == w and not inclusive):
            i += 1
        elif d < -w or (d == -w and not inclusive):
            j += 1
        else:
            count += 1
            i += 1
            j += 1
    return count


def conventional_ch(settings: SettingsPair, n_a: int, n_b: int, coincidences: int) -> float:
    """Adjusted two-point CH value from singles and coincidence counts."""
    if settings == S21:
        return n_b / 2.0 - coincidences
    if settings == S11:
        return (n_a + n_b) / 2.0 - coincidences
    if settings == S12:
        return n_a / 2.0 - coincidences
    return -float(coincidences)


def conventional_bell_function(w: float, dist: Optional[SettingsDistribution] = None) -> BellFunction:
    """The same analysis as a CH Bell function on timetag sequences."""
    l = AdjustedCH(base=TupleDistanceCH(f=conventional_window(w)), adjustment=standard_count_adjustment())
    return BellFunction(l=l, settings_dist=dist or SettingsDistribution())


def conventional_bell_values(
    trials: Sequence[TrialRecord],
    w: float,
    dist: Optional[SettingsDistribution] = None,
) -> List[BellObservation]:
    dist = dist or SettingsDistribution()
    values = []
    for trial in trials:
        c = fast_coincidence_count(trial.outcome_a, trial.outcome_b, w)
        l = conventional_ch(trial.settings, len(trial.outcome_a), len(trial.outcome_b), c)
        values.append((trial.settings, trial.settings.sign * l / dist.prob(trial.settings)))
    return values


class ConventionalReport(BaseModel):
    """Conventional coincidence analysis of a trial set."""

    window: float
    n_trials: int
    mean_bell: float
    snr: SNRResult
    loophole_free: bool = False
    note: str = "coincidence-window analysis, not loophole-free"


def conventional_analysis(
    trials: Sequence[TrialRecord],
    w: float,
    dist: Optional[SettingsDistribution] = None,
    training: Optional[Sequence[TrialRecord]] = None,
) -> ConventionalReport:
    """
    CH-style Bell estimate from coincidence and singles counts.

    With training trials the adaptive estimator is used, seeded with the
    training Bell values; otherwise the naive estimator.

    Args:
        trials: Analysis trials
        w: Coincidence window width
        dist: Settings distribution
        training: Training trials for the adaptive predictions

    Returns:
        ConventionalReport; snr > 0 indicates an (apparent) violation.
    """
    dist = dist or SettingsDistribution()
    values = conventional_bell_values(trials, w, dist)
    if not values:
        raise ValueError("conventional analysis needs at least one trial")
    if training:
        snr = estimate_snr(conventional_bell_values(training, w, dist), values, dist=dist)
    else:
        snr = naive_snr([b for _, b in values])
    mean_bell = float(np.mean([b for _, b in values]))
    logger.info("Conventional analysis at w=%.4g: mean Bell %.4g, SNR %.3f", w, mean_bell, snr.snr)
    return ConventionalReport(window=w, n_trials=len(values), mean_bell=mean_bell, snr=snr)


def coincidence_frame(trials: Sequence[TrialRecord], w: float) -> pd.DataFrame:
    """Per-trial singles and coincidence counts."""
    rows = []
    for trial in trials:
        n_a, n_b = len(trial.outcome_a), len(trial.outcome_b)
        c = fast_coincidence_count(trial.outcome_a, trial.outcome_b, w)
        rows.append(
            {
                "id": trial.id,
                "settings": trial.settings.label,
                "n_a": n_a,
                "n_b": n_b,
                "coincidences": c,
                "ch": conventional_ch(trial.settings, n_a, n_b, c),
            }
        )
    return pd.DataFrame(rows, columns=["id", "settings", "n_a", "n_b", "coincidences", "ch"])


class WindowChoice(BaseModel):
    """Trained coincidence window and the SNR curve it was picked from."""

    window: float
    snr: float
    grid: List[float] = Field(default_factory=list)
    snr_curve: List[float] = Field(default_factory=list)
    # best grid point; window is the middle of its refined plateau
    argmax_window: Optional[float] = None
    argmax_snr: Optional[float] = None


def _training_snr(trials: Sequence[TrialRecord], w: float, dist: SettingsDistribution) -> float:
    values = [b for _, b in conventional_bell_values(trials, w, dist)]
    if len(values) < 2:
        return 0.0
    return naive_snr(values).snr


def _plateau_pick(grid: np.ndarray, snrs: np.ndarray) -> Tuple[int, int, int]:
    """Best index and the contiguous run around it within PLATEAU_TOL; returns (lo, pick, hi)."""
    best = int(np.argmax(snrs))
    lo = hi = best
    while lo > 0 and snrs[lo - 1] >= snrs[best] - PLATEAU_TOL:
        lo -= 1
    while hi < len(grid) - 1 and snrs[hi + 1] >= snrs[best] - PLATEAU_TOL:
        hi += 1
    return lo, (lo + hi) // 2, hi


def optimize_window(
    trials: Sequence[TrialRecord],
    dist: Optional[SettingsDistribution] = None,
    grid: Optional[Sequence[float]] = None,
) -> WindowChoice:
    """
    Coincidence window maximizing the training-set violation.

    A log grid locates the near-optimal plateau (SNR within PLATEAU_TOL of
    the best); a linear grid spanning the plateau refines it and the middle
    of the refined plateau is returned. The best grid point over both grids
    is kept as argmax_window.

    Args:
        trials: Training trials
        dist: Settings distribution
        grid: Coarse window grid; log-spaced on [1e-3, 2] by default

    Raises:
        ValueError: If there are no training trials.
    """
    if not trials:
        raise ValueError("window optimization needs training trials")
    dist = dist or SettingsDistribution()
    coarse = np.asarray(
        grid if grid is not None else np.geomspace(WINDOW_GRID_MIN, WINDOW_GRID_MAX, WINDOW_GRID_POINTS),
        dtype=float,
    )
    coarse_snr = np.array([_training_snr(trials, w, dist) for w in coarse])
    lo, _, hi = _plateau_pick(coarse, coarse_snr)

    left = coarse[max(lo - 1, 0)]
    right = coarse[min(hi + 1, len(coarse) - 1)]
    fine = np.linspace(left, right, WINDOW_REFINE_POINTS)
    fine = fine[fine > 0]
    fine_snr = np.array([_training_snr(trials, w, dist) for w in fine])
    _, pick, _ = _plateau_pick(fine, fine_snr)

    all_w = np.concatenate([coarse, fine])
    all_snr = np.concatenate([coarse_snr, fine_snr])
    best = int(np.argmax(all_snr))
    choice = WindowChoice(
        window=float(fine[pick]),
        snr=float(fine_snr[pick]),
        grid=[float(w) for w in all_w],
        snr_curve=[float(s) for s in all_snr],
        argmax_window=float(all_w[best]),
        argmax_snr=float(all_snr[best]),
    )
    logger.info(
        "Trained coincidence window w=%.4g (training SNR %.3f; grid best w=%.4g, SNR %.3f)",
        choice.window,
        choice.snr,
        choice.argmax_window,
        choice.argmax_snr,
    )
    return choice
