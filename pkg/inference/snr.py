# inference/snr.py

import logging
import math
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.errors import TrainingError
from core.models import ALL_SETTINGS, PerSetting, SettingsDistribution, SettingsPair

logger = logging.getLogger(__name__)

# (settings pair, Bell value) for one trial
BellObservation = Tuple[SettingsPair, float]


class SNRResult(BaseModel):
    """Total Bell estimate, its variance estimate and the resulting SNR (positive when violating)."""

    b_tot: float
    v_hat: float
    snr: float
    n: int


def _snr(b_tot: float, v_hat: float) -> float:
    if v_hat > 0:
        return -b_tot / math.sqrt(v_hat)
    if b_tot == 0:
        return 0.0
    return math.copysign(math.inf, -b_tot)


class SNRState(BaseModel):
    """
    Running adaptive estimator of the total Bell value.

    Before each analysis trial, the prediction at settings ab is the mean
    Bell value at ab over training and all earlier analysis trials, unless
    fixed predictions are given.
    """

    dist: SettingsDistribution = Field(default_factory=SettingsDistribution)
    sums: Dict[str, float] = Field(default_factory=lambda: {ab.label: 0.0 for ab in ALL_SETTINGS})
    counts: Dict[str, int] = Field(default_factory=lambda: {ab.label: 0 for ab in ALL_SETTINGS})
    fixed: Optional[PerSetting] = None
    sum_delta: float = 0.0
    sum_delta_sq: float = 0.0
    sum_predicted: float = 0.0
    n: int = 0

    def seed(self, training: Iterable[BellObservation]) -> None:
        """Add training observations to the prediction sums without scoring them."""
        for ab, b in training:
            self.sums[ab.label] += float(b)
            self.counts[ab.label] += 1

    def predict(self, ab: SettingsPair) -> float:
        if self.fixed is not None:
            return self.fixed[ab]
        count = self.counts[ab.label]
        if count == 0:
            raise TrainingError(f"no training trials at settings {ab.label}", setting=ab.label)
        return self.sums[ab.label] / count

    def update(self, ab: SettingsPair, b: float) -> None:
        """Score one analysis trial, then fold it into the predictions."""
        delta = float(b) - self.predict(ab)
        self.sum_delta += delta
        self.sum_delta_sq += delta * delta
        self.sum_predicted += sum(self.dist.prob(s) * self.predict(s) for s in ALL_SETTINGS)
        self.sums[ab.label] += float(b)
        self.counts[ab.label] += 1
        self.n += 1

    def result(self) -> SNRResult:
        b_tot = self.sum_delta + self.sum_predicted
        return SNRResult(b_tot=b_tot, v_hat=self.sum_delta_sq, snr=_snr(b_tot, self.sum_delta_sq), n=self.n)


def estimate_snr(
    training: Sequence[BellObservation],
    analysis: Iterable[BellObservation],
    dist: Optional[SettingsDistribution] = None,
    predictions: Optional[PerSetting] = None,
) -> SNRResult:
    """
    Adaptive estimate of the total Bell value and its SNR.

    B_tot = sum_i delta_i + sum_i sum_ab p_ab B_i,ab with delta_i = b_i -
    B_i,s_i and variance estimate v = sum_i delta_i^2 (biased high).

    Args:
        training: Bell values of the training trials with their settings
        analysis: Bell values of the analysis trials, in order
        dist: Settings distribution (uniform by default)
        predictions: Fixed per-setting predictions replacing the running means

    Returns:
        SNRResult; snr > 0 means the estimate violates the Bell inequality.

    Raises:
        TrainingError: If a settings class is absent from training and no
            fixed predictions are given.
    """
    state = SNRState(dist=dist or SettingsDistribution(), fixed=predictions)
    state.seed(training)
    if predictions is None:
        for ab in ALL_SETTINGS:
            if state.counts[ab.label] == 0:
                raise TrainingError(f"no training trials at settings {ab.label}", setting=ab.label)
    for ab, b in analysis:
        state.update(ab, b)
    return state.result()


def naive_snr(values: Sequence[float]) -> SNRResult:
    """
    Direct estimate: f = sum b_k, sigma_e = sqrt(N sum (b_k - f/N)^2 / (N - 1)), SNR = -f / sigma_e.
    """
    b = np.asarray(values, dtype=float)
    n = len(b)
    if n < 2:
        raise ValueError("naive SNR needs at least two values")
    f = float(np.sum(b))
    v = float(n * np.sum((b - f / n) ** 2) / (n - 1))
    return SNRResult(b_tot=f, v_hat=v, snr=_snr(f, v), n=n)


def variance_difference(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """
    Estimated var(x) - var(y) over paired samples, with its standard error.

    Per sample d_i = (x_i - mean x)^2 - (y_i - mean y)^2; the estimate is
    mean(d) and the error std(d) / sqrt(N). A value below -5 errors means
    x has the smaller variance at 5 sigma.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("variance_difference needs two samples of equal length")
    if len(x) < 2:
        raise ValueError("variance_difference needs at least two samples")
    d = (x - x.mean()) ** 2 - (y - y.mean()) ** 2
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(len(d)))
