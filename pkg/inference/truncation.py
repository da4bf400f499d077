# inference/truncation.py

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.bell import BellFunction, CHFunction
from core.errors import TruncationError
from core.models import (
    ALL_SETTINGS,
    NON_22_SETTINGS,
    Outcome,
    PerSetting,
    S22,
    SettingsDistribution,
    SettingsPair,
    TrialRecord,
)
from core.tuples import ExactConstantTuple

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.5, 1.0, 2.0, 4.0)


class TruncationParams(BaseModel):
    """
    Parameters of g_ab(x) = min(max(x + b_ab, 0), c) - u_ab.

    v is the balanced per-setting violation estimated on training data;
    the truncation only helps when v > 0.
    """

    model_config = ConfigDict(frozen=True)

    b: ExactConstantTuple
    u: ExactConstantTuple
    c: float = Field(ge=0.0)
    w: PerSetting
    v: float = 0.0

    @property
    def helpful(self) -> bool:
        return self.v > 0.0

    def clamp(self, ab: SettingsPair, x):
        """min(max(x + b_ab, 0), c), element-wise for arrays."""
        return np.minimum(np.maximum(np.asarray(x, dtype=float) + self.b.c[ab], 0.0), self.c)

    def g(self, ab: SettingsPair, x):
        return self.clamp(ab, x) - self.u.c[ab]

    def bell_bound(self, dist: SettingsDistribution) -> float:
        """Upper bound z of the truncated Bell function."""
        bounds = [(self.c - self.u.c[ab]) / dist.prob(ab) for ab in NON_22_SETTINGS]
        bounds.append(self.u.c[S22] / dist.prob(S22))
        return max(bounds)


class TruncatedCH(CHFunction):
    """CH function g_ab(l_ab(x, y)) built from a base CH function."""

    base: CHFunction
    params: TruncationParams

    def value(self, ab: SettingsPair, x: Outcome, y: Outcome) -> float:
        return float(self.params.g(ab, self.base.value(ab, x, y)))


def choose_truncation(
    training_values: Dict[SettingsPair, Sequence[float]],
    w: PerSetting,
) -> TruncationParams:
    """
    Fit truncation and balancing constants on training CH values.

    b_ab = w_ab - mean(l_ab) off 22 and b_22 by exactness; c = mean(l_22)
    + w_22 + b_22. After truncation, u shifts every setting's training mean
    to -+S/4 with S = l'_11 + l'_12 + l'_21 - l'_22, so the estimated
    violation -v = S/4 is shared equally.

    Args:
        training_values: CH values l_ab,k of the training trials per setting
            (first argument B's outcome at 11)
        w: Safe separations w_ab

    Returns:
        TruncationParams; v <= 0 means the truncation is not helpful.

    Raises:
        TruncationError: If a settings class is empty or c < 0.
    """
    means = {}
    for ab in ALL_SETTINGS:
        values = np.asarray(training_values.get(ab, []), dtype=float)
        if values.size == 0:
            raise TruncationError(f"no training values at settings {ab.label}")
        means[ab] = float(np.mean(values))

    b = PerSetting.exact(*(w[ab] - means[ab] for ab in NON_22_SETTINGS))
    c = means[S22] + w[S22] + b[S22]
    if c < 0:
        raise TruncationError(f"truncation level c = {c:g} is negative")

    clamped = {
        ab: float(np.mean(np.minimum(np.maximum(np.asarray(training_values[ab], dtype=float) + b[ab], 0.0), c)))
        for ab in ALL_SETTINGS
    }
    s = sum(clamped[ab] for ab in NON_22_SETTINGS) - clamped[S22]
    u = PerSetting.exact(*(clamped[ab] - s / 4.0 for ab in NON_22_SETTINGS))
    v = -s / 4.0
    if v <= 0:
        logger.warning("Truncation not helpful: training violation estimate %.4g is not negative", -v)
    return TruncationParams(b=ExactConstantTuple(c=b), u=ExactConstantTuple(c=u), c=c, w=w, v=v)


class TestFactor(BaseModel):
    """
    Test factor R = (z - B) / z for a truncated CH Bell function B <= z.

    R is non-negative and has LR expectation at most 1.
    """

    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bell: BellFunction
    z: float
    label: str = ""

    @property
    def params(self) -> TruncationParams:
        return self.bell.l.params

    def evaluate(self, t: TrialRecord) -> float:
        b = self.bell.value(t.settings, t.outcome_a, t.outcome_b)
        return (self.z - b) / self.z

    def from_base_values(self, settings: Sequence[SettingsPair], values: Sequence[float]) -> np.ndarray:
        """
        R for trials whose untruncated CH values l~_ab are already known.

        Lets one base-distance pass feed every candidate.
        """
        values = np.asarray(values, dtype=float)
        out = np.empty(len(values))
        dist = self.bell.settings_dist
        for ab in ALL_SETTINGS:
            mask = np.fromiter((s == ab for s in settings), dtype=bool, count=len(values))
            if not mask.any():
                continue
            b = ab.sign * self.params.g(ab, values[mask]) / dist.prob(ab)
            out[mask] = (self.z - b) / self.z
        return out

    def predicted_mean(self) -> float:
        """Training expectation of R after balancing: (z + 4v) / z."""
        return (self.z + 4.0 * self.params.v) / self.z


def make_test_factor(B: BellFunction, label: str = "") -> TestFactor:
    """
    Test factor for a Bell function whose CH function is truncated.

    Raises:
        TruncationError: If B is not truncated or its bound z is not positive.
    """
    if not isinstance(B.l, TruncatedCH):
        raise TruncationError("test factors need a truncated CH function")
    z = B.l.params.bell_bound(B.settings_dist)
    if z <= 0:
        raise TruncationError(f"Bell bound z = {z:g} is not positive")
    return TestFactor(bell=B, z=z, label=label)


def build_candidates(
    base: CHFunction,
    training_values: Dict[SettingsPair, Sequence[float]],
    dist: Optional[SettingsDistribution] = None,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> List[TestFactor]:
    """
    Candidate test factors with w_ab = fraction * std(l_ab) on training.

    Candidates whose truncation is not helpful or cannot be built are
    skipped with a warning.
    """
    dist = dist or SettingsDistribution()
    stds = PerSetting.from_values(
        [float(np.std(np.asarray(training_values.get(ab, [0.0]), dtype=float))) for ab in ALL_SETTINGS]
    )
    candidates: List[TestFactor] = []
    for fraction in fractions:
        w = PerSetting.from_values([fraction * s for s in stds.values()])
        try:
            params = choose_truncation(training_values, w)
            if not params.helpful:
                continue
            bell = BellFunction(l=TruncatedCH(base=base, params=params), settings_dist=dist)
            candidates.append(make_test_factor(bell, label=f"w={fraction:g}sd"))
        except TruncationError as e:
            logger.warning("Skipping truncation candidate %g: %s", fraction, e)
    logger.info("Built %d of %d truncation candidates", len(candidates), len(fractions))
    return candidates
