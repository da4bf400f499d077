# tests/test_trialio.py

import json
import sys

import numpy as np
import pytest

from core.errors import TrialParseError
from core.models import ALL_SETTINGS, S21, SettingsDistribution, PerSetting, TrialRecord
from core.trialio import decode_trial, encode_trial, iter_trials, settings_prob, write_trials


def test_encode_decode_is_bit_exact(fixed_trial):
    """Decoding an encoded trial reproduces every field, including irrational timetags."""
    decoded = decode_trial(encode_trial(fixed_trial))
    assert decoded == fixed_trial
    assert decoded.outcome_a[2] == fixed_trial.outcome_a[2]


def test_encoded_line_uses_short_field_names(fixed_trial):
    """The wire format is one compact JSON object with id, sa, sb, a and b."""
    record = json.loads(encode_trial(fixed_trial))
    assert set(record) == {"id", "sa", "sb", "a", "b"}
    assert (record["sa"], record["sb"]) == (2, 1)


@pytest.mark.parametrize(
    "line, field",
    [
        ('{"id": 1, "sa": 1, "sb": 1, "a": []}', "b"),
        ('{"id": -1, "sa": 1, "sb": 1, "a": [], "b": []}', "id"),
        ('{"id": 1, "sa": 3, "sb": 1, "a": [], "b": []}', "sa"),
        ('{"id": 1, "sa": 1, "sb": 1, "a": [2.0, 1.0], "b": []}', "a"),
        ('{"id": 1, "sa": 1, "sb": 1, "a": [], "b": ["x"]}', "b"),
        ("not json", "line"),
    ],
)
def test_decode_names_the_offending_field(line, field):
    """Malformed records raise TrialParseError carrying the field name."""
    with pytest.raises(TrialParseError) as excinfo:
        decode_trial(line)
    assert excinfo.value.field == field


def test_write_and_iter_trials(tmp_path, quantum_trials):
    """Trials written to a JSON-lines file stream back unchanged; blank lines are skipped."""
    path = tmp_path / "nested" / "trials.jsonl"
    assert write_trials(path, quantum_trials[:5]) == 5
    with open(path, "a", encoding="utf-8") as f:
        f.write("\n")
    assert list(iter_trials(path)) == quantum_trials[:5]


def test_settings_prob_reads_distribution():
    """settings_prob returns p_ab of the distribution."""
    dist = SettingsDistribution(p=PerSetting.from_values([0.1, 0.2, 0.3, 0.4]))
    assert settings_prob(dist, S21) == pytest.approx(0.3)


def _random_tags(rng: np.random.Generator) -> list:
    """Zero to five sorted finite tags on scales from subnormal to near the float maximum."""
    n = int(rng.integers(0, 6))
    exponents = rng.integers(-320, 308, size=n)
    tags = rng.uniform(-1.0, 1.0, size=n) * np.power(10.0, exponents)
    extremes = [sys.float_info.max, -sys.float_info.max, 5e-324, -0.0, sys.float_info.min]
    for i in range(n):
        if rng.random() < 0.1:
            tags[i] = extremes[int(rng.integers(0, len(extremes)))]
    return sorted(float(x) for x in tags)


def test_encode_decode_fuzz_is_exact():
    """Ten thousand random trials, empty lists and extreme magnitudes included, decode to equal records."""
    rng = np.random.default_rng(2024)
    for trial_id in range(10_000):
        trial = TrialRecord(
            id=trial_id,
            settings=ALL_SETTINGS[int(rng.integers(0, 4))],
            outcome_a=_random_tags(rng),
            outcome_b=_random_tags(rng),
        )
        decoded = decode_trial(encode_trial(trial))
        assert decoded == trial
        assert [x.hex() for x in decoded.outcome_a] == [x.hex() for x in trial.outcome_a]
        assert [x.hex() for x in decoded.outcome_b] == [x.hex() for x in trial.outcome_b]
