# core/models.py

import math
from enum import IntEnum
from typing import Dict, Iterator, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Setting(IntEnum):
    """Measurement setting of one party."""

    S1 = 1
    S2 = 2


class SettingsPair(NamedTuple):
    """Settings chosen by party A and party B in one trial."""

    a: Setting
    b: Setting

    @classmethod
    def of(cls, a: int, b: int) -> "SettingsPair":
        return cls(Setting(a), Setting(b))

    @classmethod
    def parse(cls, label: str) -> "SettingsPair":
        """Parse a two-character label such as "21"."""
        label = str(label).strip()
        if len(label) != 2 or label[0] not in "12" or label[1] not in "12":
            raise ValueError(f"Invalid settings label: {label!r}")
        return cls.of(int(label[0]), int(label[1]))

    @property
    def label(self) -> str:
        return f"{int(self.a)}{int(self.b)}"

    @property
    def is_22(self) -> bool:
        return self.a == Setting.S2 and self.b == Setting.S2

    @property
    def sign(self) -> int:
        """-1 at the 22 settings, +1 elsewhere."""
        return -1 if self.is_22 else 1


S11 = SettingsPair(Setting.S1, Setting.S1)
S12 = SettingsPair(Setting.S1, Setting.S2)
S21 = SettingsPair(Setting.S2, Setting.S1)
S22 = SettingsPair(Setting.S2, Setting.S2)

# Canonical order used by every per-setting table in the package.
ALL_SETTINGS: Tuple[SettingsPair, ...] = (S11, S12, S21, S22)
NON_22_SETTINGS: Tuple[SettingsPair, ...] = (S11, S12, S21)

# Recorded timetags, non-decreasing, in units of the mean pair inter-arrival time.
TimetagSequence = List[float]

# A measurement outcome: a click bit for binary spaces, a timetag list otherwise.
Outcome = Union[int, TimetagSequence]


def outcome_count(outcome) -> float:
    """Number of detections in an outcome (the bit itself for binary outcomes)."""
    if isinstance(outcome, (int, float, np.integer, np.floating)):
        return float(outcome)
    return float(len(outcome))


class PerSetting(BaseModel):
    """One real value per settings pair, e.g. thresholds or exact constants."""

    model_config = ConfigDict(frozen=True)

    s11: float
    s12: float
    s21: float
    s22: float

    def __getitem__(self, ab: SettingsPair) -> float:
        return getattr(self, "s" + ab.label)

    def values(self) -> Tuple[float, float, float, float]:
        return (self.s11, self.s12, self.s21, self.s22)

    def items(self) -> Iterator[Tuple[SettingsPair, float]]:
        return iter(zip(ALL_SETTINGS, self.values()))

    def exactness_gap(self) -> float:
        """Difference between the 22 value and the sum of the other three."""
        return self.s22 - (self.s11 + self.s12 + self.s21)

    def is_exact(self, tol: float = 1e-12) -> bool:
        return abs(self.exactness_gap()) <= tol

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "PerSetting":
        """Build from four values ordered 11, 12, 21, 22."""
        if len(values) != 4:
            raise ValueError(f"Expected 4 per-setting values, got {len(values)}")
        return cls(s11=values[0], s12=values[1], s21=values[2], s22=values[3])

    @classmethod
    def from_mapping(cls, mapping: Dict[SettingsPair, float]) -> "PerSetting":
        return cls.from_values([mapping[ab] for ab in ALL_SETTINGS])

    @classmethod
    def uniform(cls, value: float) -> "PerSetting":
        return cls.from_values([value] * 4)

    @classmethod
    def exact(cls, s11: float, s12: float, s21: float) -> "PerSetting":
        """Exact tuple whose 22 value is the sum of the other three."""
        return cls(s11=s11, s12=s12, s21=s21, s22=s11 + s12 + s21)


class TrialRecord(BaseModel):
    """One trial: the settings pair plus both parties' timetag sequences."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0)
    settings: SettingsPair
    outcome_a: TimetagSequence = Field(default_factory=list)
    outcome_b: TimetagSequence = Field(default_factory=list)

    @field_validator("outcome_a", "outcome_b")
    @classmethod
    def _check_sorted_finite(cls, tags: List[float]) -> List[float]:
        for tag in tags:
            if not math.isfinite(tag):
                raise ValueError("non-finite timetag")
        for earlier, later in zip(tags, tags[1:]):
            if later < earlier:
                raise ValueError("unsorted timetags")
        return tags

    def outcome(self, party: Literal["A", "B"]) -> TimetagSequence:
        return self.outcome_a if party == "A" else self.outcome_b


class SettingsDistribution(BaseModel):
    """Known probability distribution of the settings pair."""

    model_config = ConfigDict(frozen=True)

    p: PerSetting = Field(default_factory=lambda: PerSetting.uniform(0.25))

    @field_validator("p")
    @classmethod
    def _check_probabilities(cls, p: PerSetting) -> PerSetting:
        if any(value <= 0.0 for value in p.values()):
            raise ValueError("settings probabilities must be positive")
        if abs(sum(p.values()) - 1.0) > 1e-9:
            raise ValueError("settings probabilities must sum to 1")
        return p

    def prob(self, ab: SettingsPair) -> float:
        return self.p[ab]

    def sample(self, rng: np.random.Generator, size: int) -> List[SettingsPair]:
        """Draw independent settings pairs."""
        indices = rng.choice(4, size=size, p=np.asarray(self.p.values()))
        return [ALL_SETTINGS[i] for i in indices]


class LRAssignment(BaseModel):
    """Deterministic local-realistic assignment of all four outcomes."""

    d_a1: Outcome
    d_a2: Outcome
    d_b1: Outcome
    d_b2: Outcome

    def outcome_a(self, setting: Setting) -> Outcome:
        return self.d_a1 if setting == Setting.S1 else self.d_a2

    def outcome_b(self, setting: Setting) -> Outcome:
        return self.d_b1 if setting == Setting.S1 else self.d_b2


class JitterModel(BaseModel):
    """Distribution of the delay between photon arrival and recorded timetag."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["none", "uniform", "exponential"] = "none"
    width: Optional[float] = None  # uniform: delays in [0, width]
    rate: Optional[float] = None   # exponential: density rate * exp(-rate * delay)

    @model_validator(mode="after")
    def _check_parameters(self) -> "JitterModel":
        if self.kind == "uniform" and not (self.width is not None and self.width > 0):
            raise ValueError("uniform jitter requires width > 0")
        if self.kind == "exponential" and not (self.rate is not None and self.rate > 0):
            raise ValueError("exponential jitter requires rate > 0")
        return self

    @classmethod
    def parse(cls, text: str) -> "JitterModel":
        """Parse "none", "uniform:J" or "exp:G"."""
        text = text.strip().lower()
        if text == "none":
            return cls()
        kind, _, value = text.partition(":")
        try:
            number = float(value)
        except ValueError as e:
            raise ValueError(f"Invalid jitter specification: {text!r}") from e
        if kind in ("uniform", "u"):
            return cls(kind="uniform", width=number)
        if kind in ("exp", "exponential"):
            return cls(kind="exponential", rate=number)
        raise ValueError(f"Unknown jitter kind: {kind!r}")

    @classmethod
    def from_median(cls, kind: str, median: float) -> "JitterModel":
        """Jitter model with the given median delay."""
        if kind == "uniform":
            return cls(kind="uniform", width=2.0 * median)
        if kind in ("exp", "exponential"):
            return cls(kind="exponential", rate=math.log(2.0) / median)
        raise ValueError(f"Unknown jitter kind: {kind!r}")

    def median(self) -> float:
        if self.kind == "uniform":
            return self.width / 2.0
        if self.kind == "exponential":
            return math.log(2.0) / self.rate
        return 0.0

    def scale(self) -> float:
        """Characteristic width: j_u for uniform, 1/rate for exponential."""
        if self.kind == "uniform":
            return self.width
        if self.kind == "exponential":
            return 1.0 / self.rate
        return 0.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(0.0, self.width, size=size)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=size)
        return np.zeros(size)

    @property
    def label(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.width:g}"
        if self.kind == "exponential":
            return f"exp:{self.rate:g}"
        return "none"


class PolarizerAngles(BaseModel):
    """Polarizer angles (radians) for each party and setting."""

    a1: float = 0.0
    a2: float = math.pi / 4
    b1: float = math.pi / 8
    b2: float = -math.pi / 8

    def alpha(self, setting: Setting) -> float:
        return self.a1 if setting == Setting.S1 else self.a2

    def beta(self, setting: Setting) -> float:
        return self.b1 if setting == Setting.S1 else self.b2


class SourceConfig(BaseModel):
    """Photon-pair source, detector and observation-window parameters."""

    efficiency: float = Field(default=0.8, ge=0.0, le=1.0)
    theta: float = math.pi / 4
    angles: PolarizerAngles = Field(default_factory=PolarizerAngles)
    pair_rate: float = 1.0
    t_win: float = Field(default=200.0, gt=0.0)
    lead: float = 2.0
    jitter: JitterModel = Field(default_factory=JitterModel)
    seed: int = 0

    @model_validator(mode="after")
    def _check_finite(self) -> "SourceConfig":
        values = [self.theta, self.angles.a1, self.angles.a2, self.angles.b1, self.angles.b2]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("source angles must be finite")
        return self


# Column order of OutcomeProbabilities rows: (o^A, o^B) = 00, 01, 10, 11.
OUTCOME_PAIRS: Tuple[Tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))


class OutcomeProbabilities(BaseModel):
    """
    Single-pair settings-conditional outcome probabilities p(o^A o^B | ab).

    Rows follow ALL_SETTINGS, columns follow OUTCOME_PAIRS; 1 means the
    party's detector clicked.
    """

    table: List[List[float]]

    @field_validator("table")
    @classmethod
    def _check_table(cls, table: List[List[float]]) -> List[List[float]]:
        if len(table) != 4 or any(len(row) != 4 for row in table):
            raise ValueError("outcome table must be 4 x 4")
        for row in table:
            if any(p < -1e-12 or p > 1.0 + 1e-12 for p in row):
                raise ValueError("outcome probabilities must lie in [0, 1]")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("each settings row must sum to 1")
        return table

    @classmethod
    def from_array(cls, array: np.ndarray) -> "OutcomeProbabilities":
        return cls(table=np.asarray(array, dtype=float).tolist())

    def as_array(self) -> np.ndarray:
        return np.asarray(self.table, dtype=float)

    def row(self, ab: SettingsPair) -> np.ndarray:
        return np.asarray(self.table[ALL_SETTINGS.index(ab)], dtype=float)

    def prob(self, ab: SettingsPair, o_a: int, o_b: int) -> float:
        return self.table[ALL_SETTINGS.index(ab)][OUTCOME_PAIRS.index((o_a, o_b))]

    def marginal_a(self, ab: SettingsPair) -> float:
        """Probability that A clicks at settings ab."""
        row = self.row(ab)
        return float(row[2] + row[3])

    def marginal_b(self, ab: SettingsPair) -> float:
        row = self.row(ab)
        return float(row[1] + row[3])

    def rate_a(self, setting: Setting) -> float:
        """A's click probability at one of its settings (B's setting is irrelevant)."""
        return self.marginal_a(SettingsPair(setting, Setting.S1))

    def rate_b(self, setting: Setting) -> float:
        return self.marginal_b(SettingsPair(Setting.S1, setting))

    def signaling_gap(self) -> float:
        """Largest violation of the non-signaling equalities."""
        gaps = []
        for s in Setting:
            gaps.append(abs(self.marginal_a(SettingsPair(s, Setting.S1)) - self.marginal_a(SettingsPair(s, Setting.S2))))
            gaps.append(abs(self.marginal_b(SettingsPair(Setting.S1, s)) - self.marginal_b(SettingsPair(Setting.S2, s))))
        return max(gaps)


class Matching(BaseModel):
    """Partial non-crossing matching as 1-based index pairs (k, M(k))."""

    pairs: List[Tuple[int, int]] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


class DistanceResult(BaseModel):
    """Minimum matching cost and one matching achieving it."""

    cost: float
    matching: Matching
