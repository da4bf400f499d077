# pipeline/tuple_optimizer.py

import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize

from core.distance import min_cost
from core.errors import TrainingError, TupleConstraintError
from core.models import ALL_SETTINGS, S11, SettingsPair, TrialRecord
from core.tuples import LinearEdgeWindowParams, compression_tuple, eval_tuple, make_linear_edge_window

logger = logging.getLogger(__name__)

T_GRID = np.geomspace(1e-3, 0.5, 32)
M_FACTORS = (5.0, 10.0, 20.0, 50.0, 100.0)
REFINE_MAXITER = 200


class DifferencePool(BaseModel):
    """Matched-pair differences t_l - r_k collected at one settings pair."""

    deletable: int = 0  # total tags of the first sequence
    n_trials: int = 0
    diffs: List[float] = Field(default_factory=list)


def _ordered(trial: TrialRecord) -> Tuple[List[float], List[float]]:
    """(r, t) as the CH function sees them: B's tags come first at 11."""
    if trial.settings == S11:
        return trial.outcome_b, trial.outcome_a
    return trial.outcome_a, trial.outcome_b


def difference_pools(trials: Sequence[TrialRecord], lam: float = 1.0) -> Dict[str, DifferencePool]:
    """
    Pool the differences of compression-tuple optimal matchings per setting.

    Args:
        trials: Training trials
        lam: Compression slope of min(lam |x|, 1)

    Returns:
        Mapping from settings label to its pool.
    """
    f = compression_tuple(lam)
    pools = {ab.label: DifferencePool() for ab in ALL_SETTINGS}
    for trial in trials:
        r, t = _ordered(trial)
        pool = pools[trial.settings.label]
        pool.deletable += len(r)
        pool.n_trials += 1
        if not r or not t:
            continue
        result = min_cost(f, trial.settings, r, t)
        pool.diffs.extend(t[l - 1] - r[k - 1] for k, l in result.matching.pairs)
    return pools


def approximate_cost(pool: DifferencePool, params: LinearEdgeWindowParams, ab: SettingsPair) -> float:
    """Approximate total distance X_ab - |y_ab| + sum g_ab(y) of one pool."""
    g = make_linear_edge_window(params)
    shifts = eval_tuple(g, ab, np.asarray(pool.diffs, dtype=float)) if pool.diffs else 0.0
    return float(pool.deletable - len(pool.diffs) + np.sum(shifts))


def approximate_objective(pools: Dict[str, DifferencePool], params: LinearEdgeWindowParams) -> float:
    """Approximate unadjusted Bell mean sum_ab sign_ab * cost_ab / N_ab; lower is better."""
    total = 0.0
    for ab in ALL_SETTINGS:
        pool = pools[ab.label]
        total += ab.sign * approximate_cost(pool, params, ab) / pool.n_trials
    return total


def _check_pools(pools: Dict[str, DifferencePool]) -> None:
    for ab in ALL_SETTINGS:
        pool = pools[ab.label]
        if pool.n_trials == 0:
            raise TrainingError(f"no training trials at settings {ab.label}", setting=ab.label)
        if not pool.diffs:
            raise TrainingError(f"empty difference pool at settings {ab.label}", setting=ab.label)


def optimize_tuple_params(trials: Sequence[TrialRecord], lam: float = 1.0) -> LinearEdgeWindowParams:
    """
    Symmetric linear-edge window parameters minimizing the approximate Bell estimate.

    Difference pools are built once; (t, m) is then chosen on a grid with
    t log-spaced in [1e-3, 0.5] and m in {5, 10, 20, 50, 100} / t, and
    refined with a bounded Nelder-Mead search in (log t, log m t).

    Args:
        trials: Training trials
        lam: Compression slope used to build the pools

    Returns:
        LinearEdgeWindowParams with dead zone t (3t at 22) and slope m.

    Raises:
        TrainingError: If a settings class has no trials or no matched differences.
    """
    if not trials:
        raise TrainingError("tuple optimization needs training trials")
    pools = difference_pools(trials, lam)
    _check_pools(pools)

    def objective(log_t: float, log_mt: float) -> float:
        t = math.exp(log_t)
        m = math.exp(log_mt) / t
        try:
            return approximate_objective(pools, LinearEdgeWindowParams.symmetric(t, m))
        except TupleConstraintError:
            return math.inf

    best = (math.inf, 0.0, 0.0)
    for t in T_GRID:
        for factor in M_FACTORS:
            value = objective(math.log(t), math.log(factor))
            if value < best[0]:
                best = (value, math.log(t), math.log(factor))

    res = minimize(
        lambda x: objective(x[0], x[1]),
        np.array(best[1:]),
        method="Nelder-Mead",
        options={"maxiter": REFINE_MAXITER, "xatol": 1e-4, "fatol": 1e-9},
    )
    if res.fun < best[0]:
        best = (float(res.fun), float(res.x[0]), float(res.x[1]))

    t = math.exp(best[1])
    m = math.exp(best[2]) / t
    logger.info("Trained linear-edge window: t=%.4g, m=%.4g (approximate Bell mean %.4g)", t, m, best[0])
    return LinearEdgeWindowParams.symmetric(t, m)
