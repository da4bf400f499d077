# core/distance.py

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import MatchingError
from .models import DistanceResult, Matching, SettingsPair
from .tuples import FunctionTuple, eval_tuple

logger = logging.getLogger(__name__)

# ((r_start, r_stop), (t_start, t_stop)) with Python slice semantics.
Segment = Tuple[Tuple[int, int], Tuple[int, int]]


def _as_array(tags: Sequence[float]) -> np.ndarray:
    return np.asarray(tags, dtype=float).reshape(-1)


def matching_cost(
    f: FunctionTuple,
    ab: SettingsPair,
    M: Matching,
    r: Sequence[float],
    t: Sequence[float],
) -> float:
    """
    Cost of editing r into t along the matching M.

    Unmatched tags of r cost 1 each, unmatched tags of t cost nothing and a
    matched pair (k, l) costs f_ab(t_l - r_k).

    Raises:
        MatchingError: If M is out of range, not one-to-one or crossing.
    """
    r = _as_array(r)
    t = _as_array(t)
    m, n = len(r), len(t)
    prev_k, prev_l = 0, 0
    for k, l in M.pairs:
        if not (1 <= k <= m and 1 <= l <= n):
            raise MatchingError(f"pair ({k}, {l}) out of range for lengths ({m}, {n})")
        if k <= prev_k or l <= prev_l:
            raise MatchingError(f"pair ({k}, {l}) crosses or repeats an earlier pair")
        prev_k, prev_l = k, l
    if not M.pairs:
        return float(m)
    ks = np.asarray([k for k, _ in M.pairs]) - 1
    ls = np.asarray([l for _, l in M.pairs]) - 1
    shifts = eval_tuple(f, ab, t[ls] - r[ks])
    return float(m - len(M.pairs) + np.sum(shifts))


def _cost_table(f: FunctionTuple, ab: SettingsPair, r: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Full DP table C and match costs F, C[k, l] = cost of r[:k] against t[:l]."""
    m, n = len(r), len(t)
    C = np.zeros((m + 1, n + 1))
    C[:, 0] = np.arange(m + 1)
    F = np.zeros((m, n))
    for k in range(1, m + 1):
        F[k - 1] = eval_tuple(f, ab, t - r[k - 1])
        best = np.minimum(C[k - 1, 1:] + 1.0, C[k - 1, :-1] + F[k - 1])
        C[k, 1:] = best
        C[k] = np.minimum.accumulate(C[k])
    return C, F


def _row_cost(f: FunctionTuple, ab: SettingsPair, r: np.ndarray, t: np.ndarray) -> float:
    m, n = len(r), len(t)
    if m == 0:
        return 0.0
    if n == 0:
        return float(m)
    if m == 1 and n == 1:
        return float(min(1.0, eval_tuple(f, ab, t[0] - r[0])))
    row = np.zeros(n + 1)
    for k in range(1, m + 1):
        shifts = eval_tuple(f, ab, t - r[k - 1])
        best = np.empty(n + 1)
        best[0] = k
        best[1:] = np.minimum(row[1:] + 1.0, row[:-1] + shifts)
        row = np.minimum.accumulate(best)
    return float(row[-1])


def min_cost(
    f: FunctionTuple,
    ab: SettingsPair,
    r: Sequence[float],
    t: Sequence[float],
) -> DistanceResult:
    """
    Minimum-cost non-crossing matching distance l_f,ab(r, t).

    Keeps the full DP table and backtracks one optimal matching. Ties are
    resolved as match, then delete from t, then delete from r.

    Args:
        f: Function tuple scoring matched pairs by f_ab(t_l - r_k)
        ab: Settings pair selecting the component
        r: First sequence (deletions cost 1)
        t: Second sequence (deletions are free)

    Returns:
        DistanceResult with the cost and a 1-based matching achieving it.
    """
    r = _as_array(r)
    t = _as_array(t)
    C, F = _cost_table(f, ab, r, t)
    pairs: List[Tuple[int, int]] = []
    k, l = len(r), len(t)
    while k > 0 and l > 0:
        if C[k, l] == C[k - 1, l - 1] + F[k - 1, l - 1]:
            pairs.append((k, l))
            k -= 1
            l -= 1
        elif C[k, l] == C[k, l - 1]:
            l -= 1
        else:
            k -= 1
    pairs.reverse()
    return DistanceResult(cost=float(C[len(r), len(t)]), matching=Matching(pairs=pairs))


def split_at_gaps(r: Sequence[float], t: Sequence[float], u: float) -> List[Segment]:
    """
    Cut both sequences wherever the merged tag stream has a gap of at least u.

    When f_ab(x) >= 1 for |x| > u no optimal matching pairs tags across
    such a gap, so per-segment distances add up to the full distance.

    Returns:
        Index ranges ((r_start, r_stop), (t_start, t_stop)) for each segment,
        in time order. Empty inputs give an empty list.
    """
    if u <= 0:
        raise ValueError("gap bound u must be positive")
    r = _as_array(r)
    t = _as_array(t)
    merged = np.sort(np.concatenate([r, t]))
    if len(merged) == 0:
        return []
    cut_after = np.nonzero(np.diff(merged) >= u)[0]
    bounds = [merged[0]] + [merged[i + 1] for i in cut_after] + [np.inf]
    segments: List[Segment] = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        r_range = (int(np.searchsorted(r, lo, "left")), int(np.searchsorted(r, hi, "left")))
        t_range = (int(np.searchsorted(t, lo, "left")), int(np.searchsorted(t, hi, "left")))
        segments.append((r_range, t_range))
    return segments


def gap_bound(f: FunctionTuple) -> Optional[float]:
    """
    A u with f_ab(x) >= 1 for every ab whenever |x| >= u, if one is known.

    Supported: linear-edge and hard windows, abs and its positive scalings,
    and max, clamp (c >= 1), reflect and shift built on those. Returns None
    for anything else, which disables gap splitting.
    """
    kind = f.kind
    p = f.params
    if kind == "linear_edge_window":
        return max(
            max(th + 1.0 / p["m_h"], -tl + 1.0 / p["m_l"])
            for tl, th in zip(p["t_l"], p["t_h"])
        )
    if kind == "hard_window":
        widest = max(p["w"])
        if p.get("inclusive", False) and widest > 0:
            return widest
        return float(np.nextafter(widest, np.inf))
    if kind == "abs":
        return 1.0
    if kind == "scale" and f.inputs[0].kind == "abs":
        return 1.0 / p["factor"]
    if kind == "reflect":
        return gap_bound(f.inputs[0])
    if kind == "shift":
        inner = gap_bound(f.inputs[0])
        return None if inner is None else inner + max(abs(x) for x in p["t"])
    if kind == "clamp" and p["c"] >= 1.0:
        return gap_bound(f.inputs[0])
    if kind == "max":
        bounds = [b for b in (gap_bound(g) for g in f.inputs) if b is not None]
        return min(bounds) if bounds else None
    return None


def tuple_distance(
    f: FunctionTuple,
    ab: SettingsPair,
    r: Sequence[float],
    t: Sequence[float],
    u: Optional[float] = None,
) -> float:
    """
    Cost-only distance, split at large gaps when a gap bound is available.

    Args:
        f: Function tuple
        ab: Settings pair
        r: First sequence
        t: Second sequence
        u: Gap bound; computed with gap_bound(f) when omitted

    Returns:
        l_f,ab(r, t)
    """
    r = _as_array(r)
    t = _as_array(t)
    if u is None:
        u = gap_bound(f)
    if u is None or u <= 0 or len(r) + len(t) < 4:
        return _row_cost(f, ab, r, t)
    total = 0.0
    for (r0, r1), (t0, t1) in split_at_gaps(r, t, u):
        total += _row_cost(f, ab, r[r0:r1], t[t0:t1])
    return total
