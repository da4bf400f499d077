# diagnostics/correlation.py

import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.stats import ks_2samp

from core.models import ALL_SETTINGS, S22, Setting, SettingsPair, TrialRecord

logger = logging.getLogger(__name__)

Party = Literal["A", "B"]


class CorrelationEstimate(BaseModel):
    """
    Unnormalized binned correlation c(d) = sum_i b_r(i) b_t(i + d).

    Mean and standard error are taken over trials. Autocorrelations are
    reported for d >= 0 only.
    """

    label: str
    bin_width: float
    lags: List[int]
    mean: List[float]
    stderr: List[float]
    n_trials: int


def bin_counts(tags: Sequence[float], bin_width: float, t_win: float) -> np.ndarray:
    """Counts b(k) of tags in [k w_b, (k + 1) w_b) for k = 0..ceil(t_win / w_b)."""
    n_bins = int(math.ceil(t_win / bin_width)) + 1
    tags = np.asarray(tags, dtype=float)
    index = np.floor(tags / bin_width).astype(int)
    index = index[(index >= 0) & (index < n_bins)]
    return np.bincount(index, minlength=n_bins).astype(float)


def correlation(b_r: np.ndarray, b_t: np.ndarray, lags: Sequence[int]) -> np.ndarray:
    n = len(b_r)
    out = np.zeros(len(lags))
    for i, d in enumerate(lags):
        if abs(d) >= n:
            continue
        if d >= 0:
            out[i] = float(np.dot(b_r[: n - d], b_t[d:]))
        else:
            out[i] = float(np.dot(b_r[-d:], b_t[: n + d]))
    return out


def correlation_estimate(
    trials: Sequence[TrialRecord],
    parties: Tuple[Party, Party],
    bin_width: float,
    max_lag: int,
    t_win: float,
    settings: Optional[SettingsPair] = None,
    setting: Optional[Setting] = None,
    label: str = "",
) -> CorrelationEstimate:
    """
    Trial-averaged auto- or cross-correlation of binned timetags.

    Args:
        trials: Trials to average over
        parties: ("A", "A") / ("B", "B") for autocorrelation, ("A", "B") for cross
        bin_width: Bin width w_b
        max_lag: Largest lag in bins
        t_win: Trial window length
        settings: Keep only trials with these settings
        setting: For autocorrelation, keep only trials where the party used this setting
        label: Name of the estimate

    Returns:
        CorrelationEstimate over lags 0..max_lag (auto) or -max_lag..max_lag (cross).
    """
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    auto = parties[0] == parties[1]
    lags = list(range(0, max_lag + 1)) if auto else list(range(-max_lag, max_lag + 1))

    selected = []
    for trial in trials:
        if settings is not None and trial.settings != settings:
            continue
        if setting is not None:
            own = trial.settings.a if parties[0] == "A" else trial.settings.b
            if own != setting:
                continue
        selected.append(trial)

    if not selected:
        logger.warning("No trials for correlation panel %s", label or parties)
        zeros = [0.0] * len(lags)
        return CorrelationEstimate(label=label, bin_width=bin_width, lags=lags, mean=zeros, stderr=zeros, n_trials=0)

    values = np.empty((len(selected), len(lags)))
    for k, trial in enumerate(selected):
        b_r = bin_counts(trial.outcome(parties[0]), bin_width, t_win)
        b_t = bin_counts(trial.outcome(parties[1]), bin_width, t_win)
        values[k] = correlation(b_r, b_t, lags)
    mean = values.mean(axis=0)
    if len(selected) > 1:
        stderr = values.std(axis=0, ddof=1) / math.sqrt(len(selected))
    else:
        stderr = np.zeros(len(lags))
    return CorrelationEstimate(
        label=label,
        bin_width=bin_width,
        lags=lags,
        mean=mean.tolist(),
        stderr=stderr.tolist(),
        n_trials=len(selected),
    )


def correlation_panels(
    trials: Sequence[TrialRecord],
    bin_width: float,
    max_lag: int,
    t_win: float,
) -> pd.DataFrame:
    """
    All eight panels: autocorrelation per party and setting, cross-correlation per settings pair.

    Returns:
        DataFrame with columns panel, lag, mean, stderr, n_trials.
    """
    estimates: List[CorrelationEstimate] = []
    for party in ("A", "B"):
        for setting in (Setting.S1, Setting.S2):
            estimates.append(
                correlation_estimate(
                    trials, (party, party), bin_width, max_lag, t_win,
                    setting=setting, label=f"auto_{party}{int(setting)}",
                )
            )
    for ab in ALL_SETTINGS:
        estimates.append(
            correlation_estimate(trials, ("A", "B"), bin_width, max_lag, t_win, settings=ab, label=f"cross_{ab.label}")
        )
    frames = [
        pd.DataFrame(
            {"panel": e.label, "lag": e.lags, "mean": e.mean, "stderr": e.stderr, "n_trials": e.n_trials}
        )
        for e in estimates
    ]
    return pd.concat(frames, ignore_index=True)


def nearest_separations(trials: Sequence[TrialRecord]) -> Dict[str, np.ndarray]:
    """Signed separation t_B - t_A from every A tag to its nearest B tag, per settings label."""
    pooled: Dict[str, List[np.ndarray]] = {ab.label: [] for ab in ALL_SETTINGS}
    for trial in trials:
        a = np.asarray(trial.outcome_a, dtype=float)
        b = np.asarray(trial.outcome_b, dtype=float)
        if len(a) == 0 or len(b) == 0:
            continue
        right = np.clip(np.searchsorted(b, a), 0, len(b) - 1)
        left = np.clip(right - 1, 0, len(b) - 1)
        d_right = b[right] - a
        d_left = b[left] - a
        pooled[trial.settings.label].append(np.where(np.abs(d_left) <= np.abs(d_right), d_left, d_right))
    return {label: (np.concatenate(parts) if parts else np.empty(0)) for label, parts in pooled.items()}


class BroadeningReport(BaseModel):
    """Two-sample KS comparison of 22 separations against the other settings."""

    statistic: float
    pvalue: float
    n_22: int
    n_other: int
    cutoff: float


def broadening_check(trials: Sequence[TrialRecord], cutoff: float) -> BroadeningReport:
    """
    Compare coincidence-scale nearest separations (|s| < cutoff) at 22 with
    those at the other settings.
    """
    separations = nearest_separations(trials)
    near = {label: s[np.abs(s) < cutoff] for label, s in separations.items()}
    at_22 = near[S22.label]
    other = np.concatenate([near[ab.label] for ab in ALL_SETTINGS if ab != S22])
    if len(at_22) == 0 or len(other) == 0:
        logger.warning("Broadening check has an empty sample (22: %d, other: %d)", len(at_22), len(other))
        return BroadeningReport(statistic=0.0, pvalue=1.0, n_22=len(at_22), n_other=len(other), cutoff=cutoff)
    result = ks_2samp(at_22, other)
    return BroadeningReport(
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
        n_22=len(at_22),
        n_other=len(other),
        cutoff=cutoff,
    )
