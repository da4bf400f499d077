# pipeline/models.py

import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from core.bell import CountAdjustment, standard_count_adjustment
from core.config import get_settings
from core.models import JitterModel, PerSetting, PolarizerAngles, SourceConfig
from core.tuples import LinearEdgeWindowParams
from diagnostics.coincidence import ConventionalReport
from inference.pbr import PBRResult
from inference.snr import SNRResult
from inference.truncation import DEFAULT_FRACTIONS, TruncationParams
from sources.lr_source import CalibrationReport

logger = logging.getLogger(__name__)

SourceKind = Literal["quantum", "lr", "delta_shift"]

# Largest median jitter with a detected violation, per efficiency and jitter kind.
REFERENCE_JITTER_MEDIANS: Dict[float, Dict[str, Optional[float]]] = {
    0.74: {"uniform": 0.013, "exponential": 0.0033},
    0.76: {"uniform": 0.018, "exponential": 0.0049},
    0.78: {"uniform": 0.024, "exponential": 0.0070},
    0.80: {"uniform": 0.031, "exponential": 0.0095},
    0.85: {"uniform": 0.052, "exponential": 0.017},
    0.90: {"uniform": 0.07, "exponential": 0.029},
    0.95: {"uniform": None, "exponential": 0.051},
}

SCALE_PRESETS: Dict[str, Dict[str, float]] = {
    "desk": {"n_training": 2000, "n_analysis": 20000, "t_win": 200.0},
    "full": {"n_training": 10000, "n_analysis": 200000, "t_win": 1000.0},
}


class ProtocolConfig(BaseModel):
    """
    Everything a train-then-analyze run depends on.

    theta and angles of None mean "optimize the source for the efficiency".
    """

    n_training: int = Field(default=2000, gt=0)
    n_analysis: int = Field(default=20000, gt=0)
    t_win: float = Field(default=200.0, gt=0.0)
    source: SourceKind = "quantum"
    efficiency: float = Field(default=0.8, ge=0.0, le=1.0)
    theta: Optional[float] = None
    angles: Optional[PolarizerAngles] = None
    jitter: JitterModel = Field(default_factory=lambda: JitterModel(kind="uniform", width=0.02))
    jitter_grid: List[JitterModel] = Field(default_factory=list)
    delta: float = Field(default=0.05, gt=0.0)  # delta-shift source only
    compression_lambda: float = Field(default=1.0, gt=0.0)
    block_size: int = Field(default=1000, ge=1)
    fractions: List[float] = Field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    settings_p: PerSetting = Field(default_factory=lambda: PerSetting.uniform(0.25))
    seed: int = 12345
    scale: str = "desk"

    def source_config(self, jitter: Optional[JitterModel] = None, seed: Optional[int] = None) -> SourceConfig:
        return SourceConfig(
            efficiency=self.efficiency,
            theta=self.theta if self.theta is not None else SourceConfig().theta,
            angles=self.angles or PolarizerAngles(),
            t_win=self.t_win,
            jitter=jitter or self.jitter,
            seed=self.seed if seed is None else seed,
        )


def default_protocol_config(scale: Optional[str] = None, **overrides) -> ProtocolConfig:
    """Desk or full preset; environment defaults fill seed, scale and block size."""
    env = get_settings()
    scale = scale or env.scale
    if scale not in SCALE_PRESETS:
        raise ValueError(f"unknown scale {scale!r}; expected one of {sorted(SCALE_PRESETS)}")
    preset = SCALE_PRESETS[scale]
    values = {
        "n_training": int(preset["n_training"]),
        "n_analysis": int(preset["n_analysis"]),
        "t_win": preset["t_win"],
        "seed": env.seed,
        "block_size": env.block_size,
        "scale": scale,
    }
    values.update(overrides)
    return ProtocolConfig(**values)


def load_protocol_config(path: Union[str, Path]) -> ProtocolConfig:
    """Read a JSON config document; missing fields take the preset of its scale."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    scale = data.pop("scale", None)
    config = default_protocol_config(scale, **data)
    logger.info("Loaded protocol config from %s (%s scale)", path, config.scale)
    return config


class TrainedParameters(BaseModel):
    """
    Analysis parameters fixed on the training set.

    training_values holds the training CH values per analysis and settings
    label; every prediction and the initial PBR weights are derived from
    them, so the analysis step never needs the training trials.
    """

    window: float
    window_snr: float = 0.0
    tuple_params: LinearEdgeWindowParams
    adjustment: CountAdjustment = Field(default_factory=standard_count_adjustment)
    truncations: List[TruncationParams] = Field(default_factory=list)
    initial_weights: List[float] = Field(default_factory=lambda: [1.0])
    training_values: Dict[str, Dict[str, List[float]]] = Field(default_factory=dict)


class AnalysisSummary(BaseModel):
    """Bell estimate of one analysis on the analysis set."""

    name: str
    mean_bell: float
    snr: SNRResult
    naive: Optional[SNRResult] = None
    loophole_free: bool = True


class AnalysisResults(BaseModel):
    """Results of the analyses that were run; skipped ones stay None."""

    conventional: Optional[ConventionalReport] = None
    timetag: Optional[AnalysisSummary] = None
    hard_window: Optional[AnalysisSummary] = None
    pbr: Optional[PBRResult] = None

    def headline(self) -> str:
        parts = []
        if self.conventional is not None:
            parts.append(f"conventional SNR {self.conventional.snr.snr:.3g}")
        if self.timetag is not None:
            parts.append(f"timetag SNR {self.timetag.snr.snr:.3g}")
        if self.hard_window is not None:
            parts.append(f"hard-window SNR {self.hard_window.snr.snr:.3g}")
        if self.pbr is not None:
            parts.append(f"PBR log-p {self.pbr.log_p:.3g}")
        return ", ".join(parts) or "nothing run"


class SweepRow(BaseModel):
    """One point of a jitter sweep."""

    jitter: str
    jitter_median: float
    efficiency: float
    conventional_snr: float
    timetag_snr: float
    hard_window_snr: float
    pbr_log_p: float
    sigma: float
    window: float
    tuple_t: float
    tuple_m: float


class SourceSummary(BaseModel):
    kind: SourceKind
    theta: float
    angles: PolarizerAngles
    chsh: Optional[float] = None


class ProtocolReport(BaseModel):
    """Full output of one protocol run."""

    config: ProtocolConfig
    source: SourceSummary
    calibration: Optional[CalibrationReport] = None
    trained: TrainedParameters
    conventional: ConventionalReport
    timetag: AnalysisSummary
    hard_window: AnalysisSummary
    pbr: PBRResult
    row: SweepRow


class SweepReport(BaseModel):
    rows: List[SweepRow]
    threshold: Optional[float] = None  # largest grid median with log-p > 0
    reference: Optional[float] = None
