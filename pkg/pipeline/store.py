# pipeline/store.py

import json
import logging
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from .models import ProtocolReport, TrainedParameters

logger = logging.getLogger(__name__)


class ParameterStore:
    """JSON-based persistent store for trained parameters."""

    def __init__(self, file_path: Union[str, Path] = "results/parameters.json"):
        """
        Initialize the parameter store.

        Args:
            file_path: Path to the JSON file for persistence.
        """
        self.file_path = Path(file_path)
        self._params: Optional[TrainedParameters] = None
        self.load()

    @property
    def params(self) -> Optional[TrainedParameters]:
        return self._params

    def load(self) -> Optional[TrainedParameters]:
        """Load parameters from the JSON file; a corrupt file leaves the store empty."""
        if not self.file_path.exists():
            self._params = None
            return None
        try:
            with open(self.file_path, "r", encoding="utf-8") as f:
                data = json.load(f)
            self._params = TrainedParameters.model_validate(data)
        except (json.JSONDecodeError, ValidationError) as e:
            logger.warning("Could not load trained parameters from %s: %s", self.file_path, e)
            self._params = None
        return self._params

    def save(self, params: TrainedParameters) -> Path:
        """Save parameters to the JSON file."""
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.file_path, "w", encoding="utf-8") as f:
            json.dump(params.model_dump(mode="json"), f, indent=2, ensure_ascii=False)
        self._params = params
        logger.info("Saved trained parameters to %s", self.file_path)
        return self.file_path

    def require(self) -> TrainedParameters:
        """
        Stored parameters.

        Raises:
            RuntimeError: If nothing has been trained or saved yet.
        """
        if self._params is None:
            raise RuntimeError(f"no trained parameters at {self.file_path}; run `train` first")
        return self._params


def save_report(report: ProtocolReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
    return path
