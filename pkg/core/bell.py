# core/bell.py

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import get_settings
from .distance import gap_bound, tuple_distance
from .errors import OracleSizeError
from .models import (
    ALL_SETTINGS,
    OUTCOME_PAIRS,
    LRAssignment,
    Outcome,
    OutcomeProbabilities,
    Setting,
    SettingsDistribution,
    SettingsPair,
    TrialRecord,
    outcome_count,
    S11,
    S12,
    S21,
    S22,
)
from .tuples import FunctionTuple

logger = logging.getLogger(__name__)

# A trial function of (settings, A's outcome, B's outcome).
TrialFunction = Callable[[SettingsPair, Outcome, Outcome], float]


def _bit(outcome: Outcome) -> int:
    """Click bit of an outcome: the value itself, or 1 for a non-empty tag list."""
    if isinstance(outcome, (int, np.integer)):
        return int(outcome)
    return 1 if len(outcome) > 0 else 0


class CHFunction(BaseModel):
    """
    Settings-indexed function l_ab(x, y) on pairs of outcomes.

    At settings 11 the first argument is B's outcome, elsewhere it is A's.
    Subclasses implement value().
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        raise NotImplementedError

    def tilde(self, ab: SettingsPair, o_a: Outcome, o_b: Outcome) -> float:
        """l_ab with arguments put in place: (o_b, o_a) at 11, (o_a, o_b) otherwise."""
        if ab == S11:
            return self.value(ab, o_b, o_a)
        return self.value(ab, o_a, o_b)


class BinaryTableCH(CHFunction):
    """CH function on click/no-click outcomes given as 2x2 tables per setting."""

    tables: List[List[List[float]]]  # [ab][x][y], ab ordered as ALL_SETTINGS

    @classmethod
    def from_callable(cls, fn: Callable[[SettingsPair, int, int], float]) -> "BinaryTableCH":
        return cls(tables=[[[float(fn(ab, x, y)) for y in (0, 1)] for x in (0, 1)] for ab in ALL_SETTINGS])

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        return self.tables[ALL_SETTINGS.index(ab)][_bit(x)][_bit(y)]


class TupleDistanceCH(CHFunction):
    """l_ab(r, t) = minimum matching cost under a function tuple."""

    f: FunctionTuple
    u: Optional[float] = None  # gap bound; derived from f when None

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        u = self.u if self.u is not None else gap_bound(self.f)
        return tuple_distance(self.f, ab, x, y, u=u)


class CallableCH(CHFunction):
    """CH function backed by an arbitrary Python callable (not serializable)."""

    fn: Callable[[SettingsPair, Outcome, Outcome], float]

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        return float(self.fn(ab, x, y))


class AffineCount(BaseModel):
    """Adjustment term slope * count(outcome) + intercept."""

    model_config = ConfigDict(frozen=True)

    slope: float = 0.0
    intercept: float = 0.0

    def __call__(self, outcome: Outcome) -> float:
        return self.slope * outcome_count(outcome) + self.intercept


class CountAdjustment(BaseModel):
    """
    Non-signaling adjustment functions: f_a acts on A's outcome at A's
    setting a, g_b on B's outcome at B's setting b.
    """

    model_config = ConfigDict(frozen=True)

    f1: AffineCount = Field(default_factory=AffineCount)
    f2: AffineCount = Field(default_factory=AffineCount)
    g1: AffineCount = Field(default_factory=AffineCount)
    g2: AffineCount = Field(default_factory=AffineCount)

    def f(self, setting: Setting) -> AffineCount:
        return self.f1 if setting == Setting.S1 else self.f2

    def g(self, setting: Setting) -> AffineCount:
        return self.g1 if setting == Setting.S1 else self.g2

    def is_identity(self) -> bool:
        return all(
            term.slope == 0.0 and term.intercept == 0.0
            for term in (self.f1, self.f2, self.g1, self.g2)
        )


def count_adjustment(
    f1: Tuple[float, float] = (0.0, 0.0),
    f2: Tuple[float, float] = (0.0, 0.0),
    g1: Tuple[float, float] = (0.0, 0.0),
    g2: Tuple[float, float] = (0.0, 0.0),
) -> CountAdjustment:
    """Build an adjustment from (slope, intercept) pairs."""
    return CountAdjustment(
        f1=AffineCount(slope=f1[0], intercept=f1[1]),
        f2=AffineCount(slope=f2[0], intercept=f2[1]),
        g1=AffineCount(slope=g1[0], intercept=g1[1]),
        g2=AffineCount(slope=g2[0], intercept=g2[1]),
    )


def standard_count_adjustment() -> CountAdjustment:
    """f_2(x) = -x, f_1(x) = -x/2, g_1(y) = y/2, g_2 = 0 (counts of detections)."""
    return count_adjustment(f1=(-0.5, 0.0), f2=(-1.0, 0.0), g1=(0.5, 0.0))


class AdjustedCH(CHFunction):
    """Non-signaling adjustment of a base CH function."""

    base: CHFunction
    adjustment: CountAdjustment

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        raw = self.base.value(ab, x, y)
        if ab == S11:
            # x is B's outcome, y is A's outcome
            return raw - self.adjustment.f1(y) - self.adjustment.g1(x)
        return raw + self.adjustment.f(ab.a)(x) + self.adjustment.g(ab.b)(y)


def apply_ns_adjustment(l: CHFunction, adjustment: CountAdjustment) -> CHFunction:
    """
    Apply a non-signaling adjustment.

    l'_11(x, y) = l_11(x, y) - f_1(y) - g_1(x) and l'_ab(x, y) = l_ab(x, y)
    + f_a(x) + g_b(y) otherwise. The iterated-triangle sum is unchanged on
    every deterministic assignment, and so is the expectation under any
    non-signaling distribution.
    """
    if adjustment.is_identity():
        return l
    return AdjustedCH(base=l, adjustment=adjustment)


class BellFunction(BaseModel):
    """CH Bell function B_l(t) = (-1)^[ab=22] l~_ab(o^A, o^B) / p_ab."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    l: CHFunction
    settings_dist: SettingsDistribution = Field(default_factory=SettingsDistribution)

    def value(self, ab: SettingsPair, o_a: Outcome, o_b: Outcome) -> float:
        return ab.sign * self.l.tilde(ab, o_a, o_b) / self.settings_dist.prob(ab)


def bell_value(B: BellFunction, t: TrialRecord) -> float:
    """Evaluate a CH Bell function on one trial."""
    return B.value(t.settings, t.outcome_a, t.outcome_b)


def bell_to_ch(B: TrialFunction, dist: SettingsDistribution) -> CHFunction:
    """
    Express an arbitrary two-party Bell function as a CH function.

    l_B,11(o1, o2) = p_11 B(11, o2, o1); l_B,ab(o1, o2) = p_ab B(ab, o1, o2)
    for a != b; l_B,22(o1, o2) = -p_22 B(22, o1, o2). Rebuilding the CH Bell
    function under dist gives back B pointwise.
    """

    def _l(ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        p = dist.prob(ab)
        if ab == S11:
            return p * B(ab, y, x)
        return ab.sign * p * B(ab, x, y)

    return CallableCH(fn=_l)


def triangle_value(l: CHFunction, d: LRAssignment) -> float:
    """Iterated-triangle sum l_21(dA2, dB1) + l_11(dB1, dA1) + l_12(dA1, dB2) - l_22(dA2, dB2)."""
    return (
        l.value(S21, d.d_a2, d.d_b1)
        + l.value(S11, d.d_b1, d.d_a1)
        + l.value(S12, d.d_a1, d.d_b2)
        - l.value(S22, d.d_a2, d.d_b2)
    )


class OracleResult(BaseModel):
    """Minimum LR expectation of a Bell function over deterministic assignments."""

    minimum: float
    argmin: LRAssignment
    evaluated: int


def lr_oracle(
    B: BellFunction,
    outcome_space: Sequence[Outcome],
    limit: Optional[int] = None,
) -> OracleResult:
    """
    Exhaustive LR minimum of the expected Bell value.

    For a deterministic assignment the expectation is the signed sum of
    l~_ab over the four compatible outcome pairs. Pairwise tables are
    computed once per settings pair and combined with broadcasting.

    Args:
        B: Bell function to certify
        outcome_space: Finite list of outcomes shared by all parties and settings
        limit: Maximum number of assignments (|O|^4); defaults to
            BELLTAG_ORACLE_LIMIT

    Returns:
        OracleResult with the minimum and one minimizing assignment.

    Raises:
        OracleSizeError: If |O|^4 exceeds the limit.
    """
    space = list(outcome_space)
    n = len(space)
    if n == 0:
        raise ValueError("outcome space is empty")
    limit = get_settings().oracle_limit if limit is None else limit
    size = n ** 4
    if size > limit:
        raise OracleSizeError(size, limit)

    # tables[ab][i, j]: p_ab * B(ab, O_i for A, O_j for B)
    tables = {}
    for ab in ALL_SETTINGS:
        p = B.settings_dist.prob(ab)
        tables[ab] = np.array([[p * B.value(ab, oa, ob) for ob in space] for oa in space])

    best_value = np.inf
    best_index = (0, 0, 0, 0)
    t11, t12, t21, t22 = tables[S11], tables[S12], tables[S21], tables[S22]
    for a1 in range(n):
        # axes: (a2, b1, b2)
        total = (
            t11[a1][None, :, None]
            + t12[a1][None, None, :]
            + t21[:, :, None]
            + t22[:, None, :]
        )
        flat = int(np.argmin(total))
        if total.flat[flat] < best_value:
            best_value = float(total.flat[flat])
            a2, b1, b2 = np.unravel_index(flat, total.shape)
            best_index = (a1, int(a2), int(b1), int(b2))

    a1, a2, b1, b2 = best_index
    argmin = LRAssignment(d_a1=space[a1], d_a2=space[a2], d_b1=space[b1], d_b2=space[b2])
    logger.debug("LR oracle over %d assignments: minimum %.6g", size, best_value)
    return OracleResult(minimum=best_value, argmin=argmin, evaluated=size)


# Finite settings-conditional distribution: per settings pair a list of
# (probability, A's outcome, B's outcome).
FiniteDistribution = Dict[SettingsPair, List[Tuple[float, Outcome, Outcome]]]


def _as_finite(distribution: Union[OutcomeProbabilities, FiniteDistribution]) -> FiniteDistribution:
    if isinstance(distribution, OutcomeProbabilities):
        return {
            ab: [(distribution.prob(ab, oa, ob), oa, ob) for oa, ob in OUTCOME_PAIRS]
            for ab in ALL_SETTINGS
        }
    return distribution


def expected_bell_value(
    B: BellFunction,
    distribution: Union[OutcomeProbabilities, FiniteDistribution],
) -> float:
    """Exact expectation of B when settings follow B.settings_dist and outcomes follow distribution."""
    finite = _as_finite(distribution)
    total = 0.0
    for ab in ALL_SETTINGS:
        p = B.settings_dist.prob(ab)
        total += p * sum(q * B.value(ab, oa, ob) for q, oa, ob in finite[ab])
    return total


def pr_box_probabilities() -> OutcomeProbabilities:
    """Popescu-Rohrlich box: uniform correlated outcomes except anticorrelated at 22."""
    correlated = [0.5, 0.0, 0.0, 0.5]
    anticorrelated = [0.0, 0.5, 0.5, 0.0]
    return OutcomeProbabilities(table=[correlated, correlated, correlated, anticorrelated])


def absolute_difference_ch() -> BinaryTableCH:
    """l_ab(x, y) = |x - y| on click bits at every setting."""
    return BinaryTableCH.from_callable(lambda ab, x, y: abs(x - y))


def positive_part_ch() -> BinaryTableCH:
    """l_ab(x, y) = max(x - y, 0) on click bits: 1 when the first party clicks alone."""
    return BinaryTableCH.from_callable(lambda ab, x, y: max(x - y, 0))


def bell_table(B: BellFunction) -> np.ndarray:
    """B on click bits, indexed [settings (ALL_SETTINGS order), A's bit, B's bit]."""
    return np.array([[[B.value(ab, a, b) for b in (0, 1)] for a in (0, 1)] for ab in ALL_SETTINGS])


def chsh_bell_function(dist: Optional[SettingsDistribution] = None) -> BellFunction:
    """
    CHSH inequality in CH-Bell form with l(x, y) = |x - y| on click bits.

    Its expectation is 2 * ch_value, i.e. (chsh_value + 2) / 2.
    """
    return BellFunction(l=absolute_difference_ch(), settings_dist=dist or SettingsDistribution())


def ch_value(p: OutcomeProbabilities) -> float:
    """
    CH expression p^A_1 + p^B_1 - P(11|11) - P(11|12) - P(11|21) + P(11|22).

    Non-negative for every LR model; negative values are violations.
    """
    coincidences = [p.prob(ab, 1, 1) for ab in ALL_SETTINGS]
    return (
        p.rate_a(Setting.S1)
        + p.rate_b(Setting.S1)
        - coincidences[0]
        - coincidences[1]
        - coincidences[2]
        + coincidences[3]
    )


def chsh_value(p: OutcomeProbabilities) -> float:
    """
    <AB|22> - <AB|21> - <AB|11> - <AB|12> with no-click read as -1.

    LR models give at least -2; equals -2 + 4 * ch_value.
    """
    correlators = {}
    for ab in ALL_SETTINGS:
        row = p.row(ab)
        # outcomes 00 and 11 give product +1, 01 and 10 give -1
        correlators[ab] = float(row[0] + row[3] - row[1] - row[2])
    return correlators[S22] - correlators[S21] - correlators[S11] - correlators[S12]
