# tests/test_service.py

import json

import pytest

from api import service as service_module
from api.service import BellTestService, SweepRequest, create_app
from core.config import get_settings
from core.models import JitterModel
from pipeline.models import ProtocolConfig, default_protocol_config, load_protocol_config
from pipeline.orchestrator import ProtocolOrchestrator
from pipeline.store import ParameterStore, save_report

from tests.conftest import TEST_ANGLES, TEST_THETA


def _tiny_config(**overrides) -> ProtocolConfig:
    values = dict(
        n_training=120,
        n_analysis=160,
        t_win=8.0,
        theta=TEST_THETA,
        angles=TEST_ANGLES,
        block_size=40,
        seed=4,
    )
    values.update(overrides)
    return ProtocolConfig(**values)


def test_service_runs_protocol_with_posted_config(tmp_path):
    """A posted configuration builds its own orchestrator; the report serializes."""
    report = BellTestService().run_protocol(_tiny_config())
    assert report.config.n_analysis == 160
    assert report.pbr.log_p >= 0
    path = save_report(report, tmp_path / "report.json")
    assert json.loads(path.read_text(encoding="utf-8"))["row"]["efficiency"] == pytest.approx(0.8)


def test_service_reuses_wrapped_orchestrator():
    """Without a configuration the wrapped orchestrator runs."""
    orchestrator = ProtocolOrchestrator(config=_tiny_config(seed=11))
    report = BellTestService(orchestrator).run_protocol()
    assert report.config.seed == 11


def test_sweep_request_falls_back_to_config_grid():
    """An empty request grid uses the configured jitter grid."""
    config = _tiny_config(jitter_grid=[JitterModel(kind="uniform", width=0.03)])
    report = BellTestService().run_sweep(SweepRequest(config=config))
    assert [row.jitter for row in report.rows] == ["uniform:0.03"]


def test_create_app_requires_fastapi(monkeypatch):
    """Without FastAPI the app factory explains what to install."""
    monkeypatch.setattr(service_module, "FastAPI", None)
    with pytest.raises(RuntimeError, match="FastAPI is not installed"):
        create_app()


def test_create_app_routes():
    """With FastAPI installed both endpoints are registered."""
    pytest.importorskip("fastapi")
    app = create_app()
    paths = {route.path for route in app.routes}
    assert {"/api/v1/protocol", "/api/v1/sweep"} <= paths


def test_settings_read_environment(monkeypatch):
    """BELLTAG_* variables are read on every call; log levels are upper-cased."""
    monkeypatch.setenv("BELLTAG_SEED", "3")
    monkeypatch.setenv("BELLTAG_LOG_LEVEL", "debug")
    monkeypatch.setenv("BELLTAG_BLOCK_SIZE", "250")
    settings = get_settings()
    assert settings.seed == 3
    assert settings.log_level == "DEBUG"
    assert default_protocol_config().block_size == 250


def test_unknown_scale_is_rejected():
    """Only desk and full presets exist."""
    with pytest.raises(ValueError):
        default_protocol_config("lab")


def test_load_protocol_config_fills_preset(tmp_path):
    """Fields missing from the document come from its scale preset."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"scale": "full", "efficiency": 0.9}), encoding="utf-8")
    config = load_protocol_config(path)
    assert config.efficiency == 0.9
    assert config.n_analysis == 200_000
    assert config.scale == "full"


def test_parameter_store_handles_missing_and_corrupt_files(tmp_path, caplog):
    """Missing or corrupt files leave the store empty; require then raises."""
    store = ParameterStore(tmp_path / "none.json")
    assert store.params is None
    with pytest.raises(RuntimeError):
        store.require()
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text("{not json", encoding="utf-8")
    assert ParameterStore(corrupt).params is None
    assert "Could not load trained parameters" in caplog.text
