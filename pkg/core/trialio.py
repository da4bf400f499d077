# core/trialio.py

import json
import logging
from pathlib import Path
from typing import Iterable, Iterator, Union

from pydantic import ValidationError

from .errors import TrialParseError
from .models import SettingsDistribution, SettingsPair, TrialRecord

logger = logging.getLogger(__name__)

_FIELDS = ("id", "sa", "sb", "a", "b")


def encode_trial(trial: TrialRecord) -> str:
    """
    Encode a trial as one JSON line.

    Floats are written with Python's shortest round-trip repr, so decoding
    reproduces every timetag bit-exactly.
    """
    record = {
        "id": trial.id,
        "sa": int(trial.settings.a),
        "sb": int(trial.settings.b),
        "a": [float(x) for x in trial.outcome_a],
        "b": [float(x) for x in trial.outcome_b],
    }
    return json.dumps(record, separators=(",", ":"))


def decode_trial(line: str) -> TrialRecord:
    """
    Decode one JSON line into a TrialRecord.

    Args:
        line: Text produced by encode_trial (trailing newline allowed)

    Returns:
        The decoded trial

    Raises:
        TrialParseError: If the line is malformed; the error names the field.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise TrialParseError("line", f"invalid JSON ({e.msg})") from e
    if not isinstance(record, dict):
        raise TrialParseError("line", "record must be a JSON object")

    for name in _FIELDS:
        if name not in record:
            raise TrialParseError(name, "missing field")

    trial_id = record["id"]
    if not isinstance(trial_id, int) or isinstance(trial_id, bool) or trial_id < 0:
        raise TrialParseError("id", "must be a non-negative integer")

    try:
        settings = SettingsPair.of(record["sa"], record["sb"])
    except ValueError as e:
        field = "sa" if record["sa"] not in (1, 2) else "sb"
        raise TrialParseError(field, "setting must be 1 or 2") from e

    for name in ("a", "b"):
        tags = record[name]
        if not isinstance(tags, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in tags
        ):
            raise TrialParseError(name, "timetags must be a list of numbers")
        if any(later < earlier for earlier, later in zip(tags, tags[1:])):
            raise TrialParseError(name, "unsorted timetags")

    try:
        return TrialRecord(
            id=trial_id,
            settings=settings,
            outcome_a=[float(x) for x in record["a"]],
            outcome_b=[float(x) for x in record["b"]],
        )
    except ValidationError as e:
        loc = e.errors()[0].get("loc", ("line",))
        field = {"outcome_a": "a", "outcome_b": "b"}.get(str(loc[0]), str(loc[0]))
        raise TrialParseError(field, e.errors()[0].get("msg", "invalid value")) from e


def write_trials(path: Union[str, Path], trials: Iterable[TrialRecord]) -> int:
    """Write trials to a JSON-lines file. Returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for trial in trials:
            f.write(encode_trial(trial))
            f.write("\n")
            count += 1
    logger.info("Wrote %d trials to %s", count, path)
    return count


def iter_trials(path: Union[str, Path]) -> Iterator[TrialRecord]:
    """Stream trials from a JSON-lines file, skipping blank lines."""
    with open(Path(path), "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield decode_trial(line)
            except TrialParseError:
                logger.error("Malformed trial record at %s:%d", path, lineno)
                raise


def settings_prob(dist: SettingsDistribution, ab: SettingsPair) -> float:
    """Probability p_ab of the settings pair under dist."""
    return dist.prob(ab)
