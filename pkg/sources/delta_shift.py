# sources/delta_shift.py

from typing import Optional

from core.models import Setting, SettingsPair, SourceConfig, TrialRecord

from .quantum import clip_sorted, poisson_times, trial_rng


def generate_delta_shift_trial(
    delta: float,
    config: SourceConfig,
    settings: SettingsPair,
    trial_id: int = 0,
    seed: Optional[int] = None,
) -> TrialRecord:
    """
    Local-realistic toy source exploiting the coincidence loophole.

    Every pair is emitted towards both parties; each party detects it with
    probability config.efficiency regardless of setting. A delays its tag by
    +delta at setting 2 and B by -delta at setting 2, so 22 tags are 2*delta
    apart while every other setting pair is at most delta apart.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    rng = trial_rng(config.seed if seed is None else seed, trial_id)
    arrivals = poisson_times(rng, config.pair_rate, -config.lead, config.t_win)
    n = len(arrivals)
    a_seen = rng.random(n) < config.efficiency
    b_seen = rng.random(n) < config.efficiency
    shift_a = delta if settings.a == Setting.S2 else 0.0
    shift_b = -delta if settings.b == Setting.S2 else 0.0
    a_tags = arrivals[a_seen] + shift_a
    b_tags = arrivals[b_seen] + shift_b
    a_tags = a_tags + config.jitter.draw(rng, len(a_tags))
    b_tags = b_tags + config.jitter.draw(rng, len(b_tags))
    return TrialRecord(
        id=trial_id,
        settings=settings,
        outcome_a=clip_sorted(a_tags, config.t_win),
        outcome_b=clip_sorted(b_tags, config.t_win),
    )
