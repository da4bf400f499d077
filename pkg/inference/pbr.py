# inference/pbr.py

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import norm

from core.errors import InvariantBreachError
from core.models import SettingsPair

from .snr import BellObservation, SNRState
from .truncation import TestFactor

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-10
MAX_WEIGHT_ITER = 20_000


def factor_matrix(
    candidates: Sequence[TestFactor],
    settings: Sequence[SettingsPair],
    values: Sequence[float],
) -> np.ndarray:
    """
    Test-factor values per trial, one column per factor.

    Column 0 is the trivial factor 1; column i + 1 is candidates[i].
    """
    columns = [np.ones(len(values))]
    for candidate in candidates:
        columns.append(candidate.from_base_values(settings, values))
    return np.column_stack(columns)


def _check_nonnegative(values: np.ndarray) -> None:
    if values.size == 0:
        return
    bad = np.argwhere(values < 0)
    if len(bad):
        row, col = bad[0]
        # column 0 is the trivial factor, so candidate i sits in column i + 1
        raise InvariantBreachError(int(col) - 1, float(values[row, col]))


def optimize_weights(values: np.ndarray, tol: float = WEIGHT_TOL) -> np.ndarray:
    """
    Convex weights maximizing the mean log2 of the mixed test factor.

    Multiplicative (Cover) updates w_i <- w_i * mean(V_i / (V w)) on the
    concave objective. Falls back to the trivial factor when the gain over
    it does not exceed tol.

    Args:
        values: Factor values, shape (trials, factors), column 0 trivial
        tol: Convergence and tie tolerance

    Returns:
        Weight vector summing to 1.
    """
    n_factors = values.shape[1]
    trivial = np.zeros(n_factors)
    trivial[0] = 1.0
    if values.shape[0] == 0 or n_factors == 1:
        return trivial
    _check_nonnegative(values)

    w = np.full(n_factors, 1.0 / n_factors)
    for _ in range(MAX_WEIGHT_ITER):
        mix = values @ w
        if np.any(mix <= 0):
            # Mixture vanishes on some trial; only the trivial factor is safe.
            return trivial
        updated = w * np.mean(values / mix[:, None], axis=0)
        updated /= updated.sum()
        if np.max(np.abs(updated - w)) < tol:
            w = updated
            break
        w = updated

    gain = float(np.mean(np.log2(values @ w)))
    if gain <= tol:
        return trivial
    return w


class PBRBlock(BaseModel):
    """Weights in force for one block of analysis trials and the bound after it."""

    block: int
    start: int
    stop: int
    weights: List[float]
    log_p: float
    snr: Optional[float] = None  # running SNR of the Bell values up to stop


class PBRResult(BaseModel):
    """Outcome of a PBR run over the analysis trials."""

    log_p: float = 0.0  # -log2 of the p-value bound, clamped at 0
    log_p_raw: float = 0.0
    trajectory: List[float] = Field(default_factory=list)
    blocks: List[PBRBlock] = Field(default_factory=list)
    stopped_at: Optional[int] = None

    @property
    def p_bound(self) -> float:
        return 2.0 ** (-self.log_p)


class PBRState(BaseModel):
    """
    Running state of the PBR product.

    Weights are convex coefficients over [trivial, candidates...]; log_p is
    the unclamped sum of log2 P_k over processed trials.
    """

    weights: List[float]
    log_p: float = 0.0
    processed: int = 0

    def step(self, row: np.ndarray) -> float:
        """Fold one trial's factor values into the product; returns log2 P_k."""
        _check_nonnegative(row[None, :])
        mix = float(row @ np.asarray(self.weights))
        increment = math.log2(mix) if mix > 0 else -math.inf
        self.log_p += increment
        self.processed += 1
        return increment

    @property
    def clamped(self) -> float:
        return max(0.0, self.log_p)


def pbr_run(
    analysis: np.ndarray,
    training: Optional[np.ndarray] = None,
    block_size: int = 1000,
    stop_after: Optional[int] = None,
    initial_weights: Optional[Sequence[float]] = None,
    snr: Optional[SNRState] = None,
    bell: Optional[Sequence[BellObservation]] = None,
) -> PBRResult:
    """
    Simplified PBR protocol over precomputed test-factor values.

    The first weights are initial_weights when given, otherwise they are
    fitted on the training rows only. After each block the weights are
    refitted on training plus all analysis trials seen so far. Training
    rows never enter the product. After stop_after trials every factor is
    set to 1.

    Args:
        analysis: Factor values of the analysis trials (column 0 trivial)
        training: Factor values of the training trials, same columns
        block_size: Trials between weight updates
        stop_after: Number of trials after which the test stops
        initial_weights: Weights for the first block, one per column
        snr: Seeded SNR state; with bell, each block records the running SNR
        bell: Bell value and settings of each analysis trial

    Returns:
        PBRResult with the clamped log-p bound and per-block records.

    Raises:
        InvariantBreachError: If any factor is negative on a trial.
        ValueError: If initial_weights or bell do not fit the factor matrix.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    analysis = np.asarray(analysis, dtype=float)
    if analysis.ndim != 2:
        raise ValueError("analysis must be a (trials, factors) matrix")
    n_trials, n_factors = analysis.shape
    if training is None:
        training = np.empty((0, n_factors))
    training = np.asarray(training, dtype=float)
    _check_nonnegative(training)

    limit = n_trials if stop_after is None else max(0, min(n_trials, stop_after))
    if initial_weights is None:
        first = optimize_weights(training)
    else:
        first = np.asarray(initial_weights, dtype=float)
        if first.shape != (n_factors,) or np.any(first < 0) or abs(first.sum() - 1.0) > 1e-9:
            raise ValueError(f"initial_weights must be {n_factors} convex weights")
    if snr is not None and (bell is None or len(bell) != n_trials):
        raise ValueError("running SNR needs one Bell observation per analysis trial")
    state = PBRState(weights=first.tolist())
    result = PBRResult(stopped_at=stop_after)
    trajectory: List[float] = []

    for block, start in enumerate(range(0, n_trials, block_size)):
        stop = min(start + block_size, n_trials)
        rows = analysis[start:stop]
        _check_nonnegative(rows)
        weights_used = list(state.weights)
        for k in range(start, stop):
            if k < limit:
                state.step(analysis[k])
            trajectory.append(state.clamped)
            if snr is not None:
                snr.update(*bell[k])
        result.blocks.append(
            PBRBlock(
                block=block,
                start=start,
                stop=stop,
                weights=weights_used,
                log_p=state.clamped,
                snr=snr.result().snr if snr is not None else None,
            )
        )
        if stop < limit:
            state.weights = optimize_weights(np.vstack([training, analysis[:stop]])).tolist()
            logger.debug("PBR block %d: weights %s, log-p %.4g", block, np.round(state.weights, 4), state.clamped)

    result.log_p_raw = state.log_p
    result.log_p = state.clamped
    result.trajectory = trajectory
    logger.info("PBR finished after %d trials: log-p bound %.4g", min(limit, n_trials), result.log_p)
    return result


def logp_to_sigma(logp: float) -> float:
    """One-sided standard-normal quantile equivalent to p = 2^-logp."""
    if logp <= 0:
        return 0.0
    p = 2.0 ** (-logp)
    if p > 0:
        return float(norm.isf(p))
    # Beyond double range; leading-order tail asymptotics.
    return math.sqrt(2.0 * logp * math.log(2.0))


def sigma_to_logp(sigma: float) -> float:
    """Inverse of logp_to_sigma."""
    if sigma <= 0:
        return 0.0
    return float(-norm.logsf(sigma) / math.log(2.0))
