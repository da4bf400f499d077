# api/service.py

from typing import List, Optional

from pydantic import BaseModel, Field

from core.models import JitterModel
from pipeline.models import ProtocolConfig, ProtocolReport, SweepReport
from pipeline.orchestrator import ProtocolOrchestrator


class SweepRequest(BaseModel):
    """A protocol configuration plus the jitter points to sweep."""

    config: ProtocolConfig = Field(default_factory=ProtocolConfig)
    grid: List[JitterModel] = Field(default_factory=list)


class BellTestService:
    """
    Lightweight service wrapper around ProtocolOrchestrator.

    This allows the timetag Bell test to be called as:

    - an HTTP API,
    - an internal microservice,
    - or from another program.
    """

    def __init__(self, orchestrator: Optional[ProtocolOrchestrator] = None):
        """
        Initialize the service.

        Args:
            orchestrator: Optional orchestrator. If None, one is created per
                         request from the request's configuration.
        """
        self.orchestrator = orchestrator

    def _orchestrator(self, config: Optional[ProtocolConfig]) -> ProtocolOrchestrator:
        if config is None and self.orchestrator is not None:
            return self.orchestrator
        return ProtocolOrchestrator(config=config)

    def run_protocol(self, config: Optional[ProtocolConfig] = None) -> ProtocolReport:
        """
        Run one train-then-analyze protocol.

        Args:
            config: Protocol configuration; the wrapped orchestrator's when None

        Returns:
            ProtocolReport with the trained parameters and all analyses
        """
        return self._orchestrator(config).run_protocol()

    def run_sweep(self, request: SweepRequest) -> SweepReport:
        """
        Run a jitter sweep.

        Args:
            request: SweepRequest; an empty grid falls back to config.jitter_grid

        Returns:
            SweepReport with one row per jitter point
        """
        return ProtocolOrchestrator(config=request.config).sweep(request.grid or None)


# Optional FastAPI integration
try:
    from fastapi import FastAPI
except ImportError:
    FastAPI = None  # FastAPI is optional; the core library does not depend on it.


def create_app() -> "FastAPI":
    """
    Optional FastAPI app exposing the protocol as an HTTP API.

    Usage:
        uvicorn api.service:create_app --factory

    Returns:
        FastAPI application instance

    Raises:
        RuntimeError: If FastAPI is not installed
    """
    if FastAPI is None:
        raise RuntimeError("FastAPI is not installed. Please `pip install fastapi uvicorn`.")

    app = FastAPI(title="Timetag Bell Tests", version="0.1.0")

    service = BellTestService()

    @app.post("/api/v1/protocol", response_model=ProtocolReport)
    def protocol(config: ProtocolConfig) -> ProtocolReport:
        """Run one protocol with the posted configuration."""
        return service.run_protocol(config)

    @app.post("/api/v1/sweep", response_model=SweepReport)
    def sweep(request: SweepRequest) -> SweepReport:
        """Run a jitter sweep with the posted configuration and grid."""
        return service.run_sweep(request)

    return app
