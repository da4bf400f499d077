# pipeline/orchestrator.py

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from core.bell import AdjustedCH, BellFunction, CHFunction, TupleDistanceCH, chsh_value
from core.models import (
    ALL_SETTINGS,
    JitterModel,
    OutcomeProbabilities,
    PolarizerAngles,
    SettingsDistribution,
    SettingsPair,
    SourceConfig,
    TrialRecord,
)
from core.tuples import make_linear_edge_window
from diagnostics.coincidence import (
    ConventionalReport,
    conventional_ch,
    fast_coincidence_count,
    optimize_window,
)
from inference.pbr import PBRResult, factor_matrix, logp_to_sigma, optimize_weights, pbr_run
from inference.snr import BellObservation, SNRResult, SNRState, naive_snr
from inference.truncation import TestFactor, TruncatedCH, build_candidates, make_test_factor
from sources.delta_shift import generate_delta_shift_trial
from sources.lr_source import CalibrationReport, LRTemplate, calibrate_delta_c, generate_lr_trial
from sources.quantum import generate_quantum_trial, optimize_source, outcome_probabilities

from .models import (
    REFERENCE_JITTER_MEDIANS,
    AnalysisResults,
    AnalysisSummary,
    ProtocolConfig,
    ProtocolReport,
    SourceSummary,
    SweepReport,
    SweepRow,
    TrainedParameters,
)
from .store import ParameterStore
from .tuple_optimizer import optimize_tuple_params

logger = logging.getLogger(__name__)

SETTINGS_STREAM = 7
CONVENTIONAL = "conventional"
TIMETAG = "timetag"
HARD_WINDOW = "hard_window"
PBR = "pbr"
ANALYSIS_MODES = (CONVENTIONAL, TIMETAG, HARD_WINDOW, PBR)


class PreparedSource(BaseModel):
    """A source ready to generate trials."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str
    config: SourceConfig
    probabilities: Optional[OutcomeProbabilities] = None
    template: Optional[LRTemplate] = None
    calibration: Optional[CalibrationReport] = None
    delta: float = 0.0
    chsh: Optional[float] = None

    def summary(self) -> SourceSummary:
        return SourceSummary(kind=self.kind, theta=self.config.theta, angles=self.config.angles, chsh=self.chsh)

    def generate(self, settings: SettingsPair, trial_id: int) -> TrialRecord:
        if self.kind == "quantum":
            return generate_quantum_trial(self.config, settings, trial_id=trial_id, probabilities=self.probabilities)
        if self.kind == "lr":
            return generate_lr_trial(self.template, self.config, settings, trial_id=trial_id)
        return generate_delta_shift_trial(self.delta, self.config, settings, trial_id=trial_id)


def _by_label(values: Dict[SettingsPair, List[float]]) -> Dict[str, List[float]]:
    return {ab.label: [float(v) for v in values.get(ab, [])] for ab in ALL_SETTINGS}


def _flatten(values: Dict[str, List[float]]) -> Tuple[List[SettingsPair], np.ndarray]:
    settings: List[SettingsPair] = []
    flat: List[float] = []
    for label, v in values.items():
        ab = SettingsPair.parse(label)
        settings.extend([ab] * len(v))
        flat.extend(v)
    return settings, np.asarray(flat, dtype=float)


class ProtocolOrchestrator:
    """Orchestrates the train-then-analyze protocol: generation, training and the analyses."""

    def __init__(self, config: Optional[ProtocolConfig] = None, store: Optional[ParameterStore] = None):
        """
        Initialize the orchestrator.

        Args:
            config: Protocol configuration. If None, uses the desk preset.
            store: Optional parameter store; trained parameters are saved to it.
        """
        self.config = config or ProtocolConfig()
        self.store = store
        self.dist = SettingsDistribution(p=self.config.settings_p)
        self._optimum_cache: Dict[float, Tuple[float, PolarizerAngles, float]] = {}

    # ------------------------------------------------------------------
    # Sources and trials
    # ------------------------------------------------------------------

    def prepare_source(self, jitter: Optional[JitterModel] = None, seed: Optional[int] = None) -> PreparedSource:
        """Optimize (or take) the source state and angles, and calibrate the LR template when needed."""
        config = self.config
        source_config = config.source_config(jitter=jitter, seed=seed)
        if config.source == "delta_shift":
            return PreparedSource(kind="delta_shift", config=source_config, delta=config.delta)

        if config.theta is None or config.angles is None:
            if config.efficiency not in self._optimum_cache:
                optimum = optimize_source(config.efficiency)
                self._optimum_cache[config.efficiency] = (optimum.theta, optimum.angles, optimum.chsh)
            theta, angles, _ = self._optimum_cache[config.efficiency]
            source_config = source_config.model_copy(update={"theta": theta, "angles": angles})
        probabilities = outcome_probabilities(source_config.theta, source_config.angles, source_config.efficiency)
        prepared = PreparedSource(
            kind=config.source,
            config=source_config,
            probabilities=probabilities,
            chsh=chsh_value(probabilities),
        )
        if config.source == "lr":
            template, calibration = calibrate_delta_c(source_config, probabilities)
            prepared.template = template
            prepared.calibration = calibration
        return prepared

    def settings_sequence(self, n: int, seed: Optional[int] = None) -> List[SettingsPair]:
        rng = np.random.default_rng([self.config.seed if seed is None else seed, 0, SETTINGS_STREAM])
        return self.dist.sample(rng, n)

    def generate_trials(self, source: PreparedSource) -> Tuple[List[TrialRecord], List[TrialRecord]]:
        """Training and analysis trials; ids 0..N_t-1 train, the rest analyze."""
        n_t, n_a = self.config.n_training, self.config.n_analysis
        settings = self.settings_sequence(n_t + n_a, seed=source.config.seed)
        trials = [source.generate(ab, i) for i, ab in enumerate(settings)]
        logger.info("Generated %d %s trials (%s)", len(trials), source.kind, source.config.jitter.label)
        return trials[:n_t], trials[n_t:]

    # ------------------------------------------------------------------
    # CH values per analysis
    # ------------------------------------------------------------------

    def timetag_ch(self, trained: TrainedParameters) -> CHFunction:
        base = TupleDistanceCH(f=make_linear_edge_window(trained.tuple_params))
        return AdjustedCH(base=base, adjustment=trained.adjustment)

    def _ch_values(
        self,
        name: str,
        trials: Sequence[TrialRecord],
        window: float,
        l: Optional[CHFunction] = None,
    ) -> List[float]:
        values = []
        for trial in trials:
            n_a, n_b = len(trial.outcome_a), len(trial.outcome_b)
            if name == CONVENTIONAL:
                c = fast_coincidence_count(trial.outcome_a, trial.outcome_b, window)
                values.append(conventional_ch(trial.settings, n_a, n_b, c))
            elif name == HARD_WINDOW:
                # [|x| > w] off 22 and [|x| > 3w] at 22
                width = 3.0 * window if trial.settings.is_22 else window
                c = fast_coincidence_count(trial.outcome_a, trial.outcome_b, width, inclusive=True)
                values.append(conventional_ch(trial.settings, n_a, n_b, c))
            else:
                values.append(l.tilde(trial.settings, trial.outcome_a, trial.outcome_b))
        return values

    def _bell(self, settings: Sequence[SettingsPair], values: Sequence[float]) -> List[BellObservation]:
        return [(ab, ab.sign * v / self.dist.prob(ab)) for ab, v in zip(settings, values)]

    def _seeded_snr(self, training: Dict[str, List[float]], analysis: List[BellObservation]) -> SNRResult:
        state = SNRState(dist=self.dist)
        settings, values = _flatten(training)
        state.seed(self._bell(settings, values))
        for ab, b in analysis:
            state.update(ab, b)
        return state.result()

    # ------------------------------------------------------------------
    # Protocol steps
    # ------------------------------------------------------------------

    def train(self, training: Sequence[TrialRecord]) -> TrainedParameters:
        """
        Fix every analysis parameter from the training trials.

        Args:
            training: Training trials

        Returns:
            TrainedParameters (also saved to the store when one is set)
        """
        # Step 1: Conventional coincidence window
        window = optimize_window(training, dist=self.dist)

        # Step 2: Linear-edge window tuple
        tuple_params = optimize_tuple_params(training, lam=self.config.compression_lambda)
        trained = TrainedParameters(window=window.window, window_snr=window.snr, tuple_params=tuple_params)

        # Step 3: Training CH values of every analysis
        l = self.timetag_ch(trained)
        timetag_values: Dict[SettingsPair, List[float]] = {ab: [] for ab in ALL_SETTINGS}
        for trial, v in zip(training, self._ch_values(TIMETAG, training, window.window, l)):
            timetag_values[trial.settings].append(v)
        training_values = {TIMETAG: _by_label(timetag_values)}
        for name in (CONVENTIONAL, HARD_WINDOW):
            grouped: Dict[SettingsPair, List[float]] = {ab: [] for ab in ALL_SETTINGS}
            for trial, v in zip(training, self._ch_values(name, training, window.window)):
                grouped[trial.settings].append(v)
            training_values[name] = _by_label(grouped)

        # Step 4: Truncation candidates and initial PBR weights
        candidates = build_candidates(l, timetag_values, dist=self.dist, fractions=self.config.fractions)
        settings, values = _flatten(training_values[TIMETAG])
        initial = optimize_weights(factor_matrix(candidates, settings, values))

        trained = trained.model_copy(
            update={
                "truncations": [c.params for c in candidates],
                "initial_weights": initial.tolist(),
                "training_values": training_values,
            }
        )

        # Step 5: Persist
        if self.store is not None:
            self.store.save(trained)
        return trained

    def candidates(self, trained: TrainedParameters) -> List[TestFactor]:
        l = self.timetag_ch(trained)
        return [
            make_test_factor(BellFunction(l=TruncatedCH(base=l, params=p), settings_dist=self.dist), label=f"candidate-{i}")
            for i, p in enumerate(trained.truncations)
        ]

    def analyze(
        self,
        analysis: Sequence[TrialRecord],
        trained: TrainedParameters,
        modes: Sequence[str] = ANALYSIS_MODES,
    ) -> AnalysisResults:
        """
        Run the selected analyses on the analysis trials only.

        Args:
            analysis: Analysis trials
            trained: Parameters fixed on the training set
            modes: Any of conventional, timetag, hard_window, pbr

        Returns:
            AnalysisResults with the requested analyses filled in.
        """
        unknown = set(modes) - set(ANALYSIS_MODES)
        if unknown:
            raise ValueError(f"unknown analysis modes: {sorted(unknown)}")
        settings = [t.settings for t in analysis]
        results = AnalysisResults()

        # Step 1: Conventional coincidence analysis (not loophole-free)
        if CONVENTIONAL in modes:
            conv_bell = self._bell(settings, self._ch_values(CONVENTIONAL, analysis, trained.window))
            results.conventional = ConventionalReport(
                window=trained.window,
                n_trials=len(analysis),
                mean_bell=float(np.mean([b for _, b in conv_bell])),
                snr=self._seeded_snr(trained.training_values[CONVENTIONAL], conv_bell),
            )

        # Step 2: Timetag distance analysis with the trained tuple
        timetag_values: List[float] = []
        if TIMETAG in modes or PBR in modes:
            timetag_values = self._ch_values(TIMETAG, analysis, trained.window, self.timetag_ch(trained))
        if TIMETAG in modes:
            results.timetag = self._summary(TIMETAG, trained, settings, timetag_values)

        # Step 3: Hard-window timetag analysis (w off 22, 3w at 22)
        if HARD_WINDOW in modes:
            hard_values = self._ch_values(HARD_WINDOW, analysis, trained.window)
            results.hard_window = self._summary(HARD_WINDOW, trained, settings, hard_values)

        # Step 4: PBR over the truncation candidates, seeded with the trained weights
        if PBR in modes:
            candidates = self.candidates(trained)
            train_settings, train_values = _flatten(trained.training_values[TIMETAG])
            running = SNRState(dist=self.dist)
            running.seed(self._bell(train_settings, train_values))
            results.pbr = pbr_run(
                factor_matrix(candidates, settings, timetag_values),
                training=factor_matrix(candidates, train_settings, train_values),
                block_size=self.config.block_size,
                initial_weights=trained.initial_weights,
                snr=running,
                bell=self._bell(settings, timetag_values),
            )
        logger.info("Analysis of %d trials: %s", len(analysis), results.headline())
        return results

    def _summary(
        self, name: str, trained: TrainedParameters, settings: List[SettingsPair], values: List[float]
    ) -> AnalysisSummary:
        bell = self._bell(settings, values)
        b = [v for _, v in bell]
        return AnalysisSummary(
            name=name,
            mean_bell=float(np.mean(b)),
            snr=self._seeded_snr(trained.training_values[name], bell),
            naive=naive_snr(b) if len(b) >= 2 else None,
        )

    def run_protocol(self, jitter: Optional[JitterModel] = None, seed: Optional[int] = None) -> ProtocolReport:
        """
        Run the complete protocol: generate, train, analyze.

        Args:
            jitter: Jitter model overriding the configured one
            seed: Master seed overriding the configured one

        Returns:
            ProtocolReport; training trials enter no reported statistic.
        """
        # Step 1: Prepare the source and generate the trials
        source = self.prepare_source(jitter=jitter, seed=seed)
        training, analysis = self.generate_trials(source)

        # Step 2: Determine the analysis parameters from the training set
        trained = self.train(training)

        # Step 3: Perform the analyses on the analysis set
        results = self.analyze(analysis, trained)
        conventional, timetag, hard_window, pbr = results.conventional, results.timetag, results.hard_window, results.pbr

        # Step 4: Assemble the report
        used = source.config.jitter
        row = SweepRow(
            jitter=used.label,
            jitter_median=used.median(),
            efficiency=source.config.efficiency,
            conventional_snr=conventional.snr.snr,
            timetag_snr=timetag.snr.snr,
            hard_window_snr=hard_window.snr.snr,
            pbr_log_p=pbr.log_p,
            sigma=logp_to_sigma(pbr.log_p),
            window=trained.window,
            tuple_t=trained.tuple_params.t_h.s11,
            tuple_m=trained.tuple_params.m_h,
        )
        return ProtocolReport(
            config=self.config.model_copy(update={"jitter": used, "seed": source.config.seed}),
            source=source.summary(),
            calibration=source.calibration,
            trained=trained,
            conventional=conventional,
            timetag=timetag,
            hard_window=hard_window,
            pbr=pbr,
            row=row,
        )

    def sweep(self, grid: Optional[Sequence[JitterModel]] = None) -> SweepReport:
        """
        One protocol run per jitter grid point, each with its own seed.

        Returns:
            SweepReport with the rows, the largest median jitter still showing
            log-p > 0 and the tabulated reference for this efficiency.
        """
        grid = list(grid if grid is not None else self.config.jitter_grid)
        if not grid:
            raise ValueError("sweep needs a non-empty jitter grid")
        rows: List[SweepRow] = []
        for i, jitter in enumerate(grid):
            seed = int(np.random.SeedSequence([self.config.seed, i]).generate_state(1)[0])
            logger.info("Sweep point %d/%d: %s (seed %d)", i + 1, len(grid), jitter.label, seed)
            rows.append(self.run_protocol(jitter=jitter, seed=seed).row)

        violating = [r.jitter_median for r in rows if r.pbr_log_p > 0]
        kinds = {j.kind for j in grid}
        reference = None
        if len(kinds) == 1:
            reference = REFERENCE_JITTER_MEDIANS.get(round(self.config.efficiency, 2), {}).get(kinds.pop())
        return SweepReport(rows=rows, threshold=max(violating) if violating else None, reference=reference)


def sweep_frame(report: SweepReport) -> pd.DataFrame:
    """Sweep rows as a table, one row per jitter point."""
    return pd.DataFrame([row.model_dump() for row in report.rows], columns=list(SweepRow.model_fields))


def pbr_frame(result: PBRResult) -> pd.DataFrame:
    """PBR blocks with their weights, running log-p and running SNR."""
    rows = []
    for block in result.blocks:
        row = {"block": block.block, "start": block.start, "stop": block.stop, "log_p": block.log_p, "snr": block.snr}
        row.update({f"w{i}": w for i, w in enumerate(block.weights)})
        rows.append(row)
    return pd.DataFrame(rows, columns=["block", "start", "stop", "log_p", "snr"] if not rows else None)
