# tests/test_orchestrator.py

import pytest

from core.models import ALL_SETTINGS, JitterModel
from pipeline.models import AnalysisResults, ProtocolConfig, ProtocolReport, TrainedParameters
from pipeline.orchestrator import (
    ANALYSIS_MODES,
    CONVENTIONAL,
    HARD_WINDOW,
    PBR,
    TIMETAG,
    ProtocolOrchestrator,
    pbr_frame,
    sweep_frame,
)
from pipeline.store import ParameterStore

from tests.conftest import TEST_ANGLES, TEST_THETA


def _small_config(**overrides) -> ProtocolConfig:
    values = dict(
        n_training=200,
        n_analysis=400,
        t_win=10.0,
        efficiency=0.8,
        theta=TEST_THETA,
        angles=TEST_ANGLES,
        jitter=JitterModel(kind="uniform", width=0.02),
        block_size=100,
        seed=1,
    )
    values.update(overrides)
    return ProtocolConfig(**values)


@pytest.fixture
def orchestrator():
    return ProtocolOrchestrator(config=_small_config())


@pytest.fixture
def split(orchestrator):
    source = orchestrator.prepare_source()
    return orchestrator.generate_trials(source)


def test_generate_trials_split_and_determinism(orchestrator, split):
    """Training takes the first ids, analysis the rest; a fixed seed reproduces the trials."""
    training, analysis = split
    assert len(training) == 200 and len(analysis) == 400
    assert [t.id for t in training] == list(range(200))
    assert analysis[0].id == 200
    again = orchestrator.generate_trials(orchestrator.prepare_source())
    assert again[1][:5] == analysis[:5]


def test_train_fixes_everything_and_persists(orchestrator, split, tmp_path):
    """Training fills the window, tuple, candidates and training values, and saves them."""
    training, _ = split
    store = ParameterStore(tmp_path / "parameters.json")
    orchestrator.store = store
    trained = orchestrator.train(training)
    assert trained.window > 0
    assert trained.tuple_params.m_h > 0
    assert set(trained.training_values) == {TIMETAG, CONVENTIONAL, HARD_WINDOW}
    for values in trained.training_values.values():
        assert set(values) == {ab.label for ab in ALL_SETTINGS}
        assert sum(len(v) for v in values.values()) == len(training)
    assert len(trained.initial_weights) == len(trained.truncations) + 1
    assert sum(trained.initial_weights) == pytest.approx(1.0)
    reloaded = ParameterStore(tmp_path / "parameters.json").require()
    assert reloaded == TrainedParameters.model_validate(trained.model_dump(mode="json"))


def test_analyze_selected_modes(orchestrator, split):
    """Only the requested analyses run; unknown modes are refused."""
    training, analysis = split
    trained = orchestrator.train(training)
    results = orchestrator.analyze(analysis, trained, modes=[TIMETAG])
    assert isinstance(results, AnalysisResults)
    assert results.timetag is not None
    assert results.conventional is None and results.hard_window is None and results.pbr is None
    assert results.timetag.snr.n == len(analysis)
    assert "timetag SNR" in results.headline()
    assert AnalysisResults().headline() == "nothing run"
    with pytest.raises(ValueError):
        orchestrator.analyze(analysis, trained, modes=["chsh"])


def test_analysis_uses_analysis_trials_only(orchestrator, split):
    """Every statistic counts exactly the analysis trials; the PBR trajectory covers them."""
    training, analysis = split
    trained = orchestrator.train(training)
    results = orchestrator.analyze(analysis, trained, modes=ANALYSIS_MODES)
    assert results.conventional.n_trials == len(analysis)
    assert results.conventional.snr.n == len(analysis)
    assert results.hard_window.snr.n == len(analysis)
    assert len(results.pbr.trajectory) == len(analysis)
    assert results.pbr.log_p >= 0
    frame = pbr_frame(results.pbr)
    assert list(frame.columns[:5]) == ["block", "start", "stop", "log_p", "snr"]
    assert len(frame) == 4


def test_pbr_blocks_carry_trained_weights_and_running_snr(orchestrator, split):
    """The first block uses the trained weights; the last block's SNR is the timetag SNR."""
    training, analysis = split
    trained = orchestrator.train(training)
    results = orchestrator.analyze(analysis, trained, modes=[TIMETAG, PBR])
    blocks = results.pbr.blocks
    assert blocks[0].weights == trained.initial_weights
    assert blocks[-1].snr == pytest.approx(results.timetag.snr.snr)
    assert pbr_frame(results.pbr)["snr"].notna().all()


def test_run_protocol_report(orchestrator):
    """The report row mirrors the analyses and records the jitter and seed used."""
    report = orchestrator.run_protocol(seed=3)
    assert isinstance(report, ProtocolReport)
    assert report.config.seed == 3
    assert report.row.timetag_snr == report.timetag.snr.snr
    assert report.row.pbr_log_p == report.pbr.log_p
    assert report.row.jitter == "uniform:0.02"
    assert report.row.jitter_median == pytest.approx(0.01)
    assert report.source.chsh is not None
    assert report.calibration is None


def test_delta_shift_fools_only_conventional_counting():
    """The local toy source violates under coincidence counting but not under the timetag analysis."""
    config = _small_config(
        source="delta_shift",
        delta=0.05,
        efficiency=1.0,
        jitter=JitterModel(),
        n_training=300,
        n_analysis=1000,
    )
    report = ProtocolOrchestrator(config=config).run_protocol()
    assert report.row.conventional_snr > 2.0
    # no significant violation; the local toy has zero expected Bell value here
    assert report.row.timetag_snr < 3.0
    assert report.source.kind == "delta_shift"


def test_sweep_needs_grid(orchestrator):
    """An empty jitter grid is refused."""
    with pytest.raises(ValueError):
        orchestrator.sweep([])


def test_sweep_frame_has_one_row_per_point():
    """Two jitter points give two rows with the sweep columns."""
    config = _small_config(n_training=120, n_analysis=200)
    grid = [JitterModel(kind="uniform", width=0.02), JitterModel(kind="uniform", width=0.2)]
    report = ProtocolOrchestrator(config=config).sweep(grid)
    frame = sweep_frame(report)
    assert len(frame) == 2
    assert list(frame["jitter"]) == ["uniform:0.02", "uniform:0.2"]
    assert report.reference == pytest.approx(0.031)
