# sources/lr_source.py

"""
Adversarial local-realistic source mimicking a jittery quantum source.

All four tag sequences (both parties, both settings) are generated before
the settings are looked at. Conventional coincidence counting sees the
quantum source's rates, including an apparent PR-box component realized by
"hidden" coincidences whose 22 partners sit too far apart to be counted.
"""

import itertools
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.optimize import linprog

from core.errors import InfeasibleError
from core.models import (
    ALL_SETTINGS,
    LRAssignment,
    OutcomeProbabilities,
    S22,
    Setting,
    SettingsPair,
    SourceConfig,
    TrialRecord,
)
from core.bell import pr_box_probabilities

from .quantum import clip_sorted, poisson_times, source_probabilities, trial_rng

logger = logging.getLogger(__name__)

RECOMBINATION_TOL = 1e-9
CALIBRATION_SPAN = 4000.0
CALIBRATION_SEED = 20_240_101
RATE_MATCH_TOL = 1e-3

# Deterministic strategies as bits (d_a1, d_a2, d_b1, d_b2).
STRATEGIES: Tuple[Tuple[int, int, int, int], ...] = tuple(itertools.product((0, 1), repeat=4))


class TriangleDensity(BaseModel):
    """Triangle density J(x, w) on [-w, w] with J(0, w) = 1/w."""

    model_config = ConfigDict(frozen=True)

    width: float = Field(gt=0.0)


def triangle_eval(J: TriangleDensity, x):
    x = np.asarray(x, dtype=float)
    value = np.maximum(0.0, (1.0 - np.abs(x) / J.width) / J.width)
    return float(value) if value.ndim == 0 else value


def triangle_sample(J: TriangleDensity, rng: np.random.Generator, size: Optional[int] = None):
    """Difference of two independent uniform draws on [0, width]."""
    return rng.uniform(0.0, J.width, size) - rng.uniform(0.0, J.width, size)


def _strategy_table(strategy: Tuple[int, int, int, int]) -> np.ndarray:
    """Outcome table (rows ALL_SETTINGS, columns 00/01/10/11) of a deterministic strategy."""
    d_a = {Setting.S1: strategy[0], Setting.S2: strategy[1]}
    d_b = {Setting.S1: strategy[2], Setting.S2: strategy[3]}
    table = np.zeros((4, 4))
    for i, ab in enumerate(ALL_SETTINGS):
        table[i, 2 * d_a[ab.a] + d_b[ab.b]] = 1.0
    return table


class LRTemplate(BaseModel):
    """
    Template p' = lambda_lr * p_lr + lambda_pr * p_pr for the LR source.

    p' equals the target p except at 22, where delta_c moves weight from
    01 and 10 to 11 and 00, keeping every marginal. q holds the
    unnormalized weights of the 16 deterministic strategies (summing to
    lambda_lr).
    """

    p_target: OutcomeProbabilities
    delta_c: float = 0.0
    p_prime: OutcomeProbabilities
    lambda_lr: float
    lambda_pr: float
    q: List[float]

    @property
    def p_lr(self) -> OutcomeProbabilities:
        if self.lambda_lr <= 0:
            raise ValueError("template has no LR component")
        table = sum(w * _strategy_table(s) for w, s in zip(self.q, STRATEGIES))
        return OutcomeProbabilities.from_array(table / self.lambda_lr)

    def recombined(self) -> np.ndarray:
        table = sum(w * _strategy_table(s) for w, s in zip(self.q, STRATEGIES))
        return table + self.lambda_pr * pr_box_probabilities().as_array()

    def rate(self, a2: Optional[int] = None, b2: Optional[int] = None) -> float:
        """Total strategy weight with the given 22 bits."""
        return float(sum(w for w, s in zip(self.q, STRATEGIES) if (a2 is None or s[1] == a2) and (b2 is None or s[3] == b2)))

    def conditional(self, a2: int, b2: Optional[int] = None) -> Tuple[List[Tuple[int, int, int, int]], np.ndarray]:
        """Strategies with the given bits and their normalized weights."""
        chosen = [(s, w) for w, s in zip(self.q, STRATEGIES) if s[1] == a2 and (b2 is None or s[3] == b2)]
        weights = np.array([max(w, 0.0) for _, w in chosen])
        total = weights.sum()
        if total <= 0:
            return [], weights
        return [s for s, _ in chosen], weights / total


def adjust_template(p: OutcomeProbabilities, delta_c: float) -> OutcomeProbabilities:
    """p' with p'(11|22) and p'(00|22) raised by delta_c, p'(01|22) and p'(10|22) lowered."""
    limit = min(p.prob(S22, 0, 1), p.prob(S22, 1, 0))
    if not 0.0 <= delta_c <= limit + 1e-15:
        raise ValueError(f"delta_c must lie in [0, {limit:g}], got {delta_c}")
    table = p.as_array().copy()
    row = ALL_SETTINGS.index(S22)
    table[row] += np.array([delta_c, -delta_c, -delta_c, delta_c])
    return OutcomeProbabilities.from_array(np.clip(table, 0.0, 1.0))


def decompose_template(p_prime: OutcomeProbabilities) -> Tuple[float, List[float], float]:
    """
    Split p' into an LR part and a PR-box part, maximizing the LR weight.

    Solves max sum(q) subject to sum_j q_j D_j + lambda_pr P_pr = p',
    q >= 0, lambda_pr >= 0, where D_j are the deterministic strategies.

    Returns:
        (lambda_lr, q, lambda_pr) with q the 16 unnormalized strategy weights.

    Raises:
        InfeasibleError: If p' lies outside the LR + PR hull.
    """
    columns = [_strategy_table(s).reshape(-1) for s in STRATEGIES]
    columns.append(pr_box_probabilities().as_array().reshape(-1))
    A_eq = np.column_stack(columns)
    b_eq = p_prime.as_array().reshape(-1)
    cost = np.concatenate([-np.ones(len(STRATEGIES)), [0.0]])
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"template decomposition failed: {res.message}", constraint="p' in LR+PR hull")
    q = [max(float(v), 0.0) for v in res.x[:-1]]
    lambda_pr = max(float(res.x[-1]), 0.0)
    residual = float(np.max(np.abs(A_eq @ np.concatenate([q, [lambda_pr]]) - b_eq)))
    if residual > RECOMBINATION_TOL:
        raise InfeasibleError(f"decomposition residual {residual:.3g}", constraint="recombination")
    return float(sum(q)), q, lambda_pr


def build_template(p_target: OutcomeProbabilities, delta_c: float = 0.0) -> LRTemplate:
    p_prime = adjust_template(p_target, delta_c)
    lambda_lr, q, lambda_pr = decompose_template(p_prime)
    return LRTemplate(
        p_target=p_target,
        delta_c=delta_c,
        p_prime=p_prime,
        lambda_lr=lambda_lr,
        lambda_pr=lambda_pr,
        q=q,
    )


def _hidden_cap(template: LRTemplate) -> float:
    """Per-tag rate at which an isolated A2 tag reaches the required hidden fraction."""
    p_a2 = template.p_prime.marginal_a(S22)
    if p_a2 <= 0:
        return 0.0
    fraction = min(template.lambda_pr / 2.0 / p_a2, 1.0 - 1e-12)
    return -math.log1p(-fraction)


def _rate_bound(template: LRTemplate) -> float:
    """Partner intensity allowed for B2: p^B_2 - p'(11|22) = p'(01|22)."""
    return template.p_prime.prob(S22, 0, 1)


def hidden_rates(a2_tags: np.ndarray, template: LRTemplate, j_u: float) -> np.ndarray:
    """
    Per-tag hidden-coincidence rates lambda(t) maximizing their sum.

    Partners of a tag at t arrive with intensity lambda(t) J(s - t, 3 j_u);
    the summed partner intensity must stay below p'(01|22) everywhere.
    The summed intensity is piecewise linear with kinks at t and t +- 3 j_u,
    so bounding it at those points bounds it everywhere.

    Raises:
        InfeasibleError: If the LP solver fails.
    """
    n = len(a2_tags)
    cap = _hidden_cap(template)
    bound = _rate_bound(template)
    if n == 0 or cap <= 0 or bound <= 0:
        return np.zeros(n)
    kernel = TriangleDensity(width=3.0 * j_u)
    peak = 1.0 / kernel.width
    single = min(cap, bound / peak)

    tags = np.sort(a2_tags)
    gaps = np.diff(tags)
    if n == 1 or np.all(gaps >= 2.0 * kernel.width):
        return np.full(n, single)

    points = np.concatenate([tags - kernel.width, tags, tags + kernel.width])
    lo = np.searchsorted(tags, points - kernel.width, side="right")
    hi = np.searchsorted(tags, points + kernel.width, side="left")
    counts = hi - lo
    rows = np.repeat(np.arange(len(points)), counts)
    offsets = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = np.repeat(lo, counts) + offsets
    vals = np.atleast_1d(triangle_eval(kernel, points[rows] - tags[cols]))
    A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(len(points), n))
    res = linprog(
        -np.ones(n),
        A_ub=A_ub,
        b_ub=np.full(len(points), bound),
        bounds=(0.0, cap),
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleError(f"hidden-rate LP failed: {res.message}", constraint="partner intensity bound")
    return np.clip(res.x, 0.0, cap)


def _partner_intensity(s: np.ndarray, tags: np.ndarray, rates: np.ndarray, kernel: TriangleDensity) -> np.ndarray:
    if len(tags) == 0 or len(s) == 0:
        return np.zeros(len(s))
    return (rates[None, :] * triangle_eval(kernel, s[:, None] - tags[None, :])).sum(axis=1)


class CalibrationReport(BaseModel):
    """Calibration of delta_c: required and achieved hidden-coincidence rates."""

    delta_c: float
    lambda_lr: float
    lambda_pr: float
    required_rate: float
    achieved_rate: float
    feasible: bool
    j_u: float


def _achieved_rate(template: LRTemplate, j_u: float, span: float, seed: int) -> float:
    """Monte Carlo hidden-event rate per unit time: sum over A2 tags of 1 - exp(-lambda)."""
    rng = np.random.default_rng(seed)
    tags = poisson_times(rng, template.p_prime.marginal_a(S22), 0.0, span)
    if len(tags) == 0:
        return 0.0
    rates = hidden_rates(tags, template, j_u)
    return float(np.sum(-np.expm1(-rates)) / span)


def calibrate_delta_c(
    config: SourceConfig,
    p_target: Optional[OutcomeProbabilities] = None,
    span: float = CALIBRATION_SPAN,
    seed: int = CALIBRATION_SEED,
    iterations: int = 30,
) -> Tuple[LRTemplate, CalibrationReport]:
    """
    Smallest delta_c for which the achievable hidden rate meets lambda_pr / 2.

    delta_c = 0 is kept when it already works; otherwise delta_c is
    bisected on [0, min(p(01|22), p(10|22))]. When no value works the
    template with the largest achieved-to-required ratio is returned
    with feasible=False.

    Args:
        config: Source configuration (uniform jitter required)
        p_target: Quantum outcome table; computed from config when omitted
        span: Length of the Monte Carlo A2 stream
        seed: Seed of the Monte Carlo stream
        iterations: Bisection steps

    Returns:
        (template, report)
    """
    if config.jitter.kind != "uniform":
        raise ValueError("the LR source mimics uniform jitter only")
    j_u = config.jitter.width
    p_target = p_target or source_probabilities(config)
    limit = min(p_target.prob(S22, 0, 1), p_target.prob(S22, 1, 0))

    def evaluate(delta: float) -> Tuple[LRTemplate, float, float]:
        template = build_template(p_target, delta)
        required = template.lambda_pr / 2.0
        achieved = _achieved_rate(template, j_u, span, seed) if required > 0 else 0.0
        return template, required, achieved

    def ok(required: float, achieved: float) -> bool:
        return achieved >= required * (1.0 - RATE_MATCH_TOL)

    template, required, achieved = evaluate(0.0)
    best = (template, required, achieved)
    if not ok(required, achieved):
        top = evaluate(limit)
        if not ok(top[1], top[2]):
            ratios = [(a / r if r > 0 else math.inf, (t, r, a)) for t, r, a in (best, top)]
            template, required, achieved = max(ratios, key=lambda item: item[0])[1]
            report = CalibrationReport(
                delta_c=template.delta_c,
                lambda_lr=template.lambda_lr,
                lambda_pr=template.lambda_pr,
                required_rate=required,
                achieved_rate=achieved,
                feasible=False,
                j_u=j_u,
            )
            logger.warning("No feasible delta_c at j_u=%.4g (achieved %.4g of %.4g)", j_u, achieved, required)
            return template, report
        lo, hi = 0.0, limit
        best = top
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            candidate = evaluate(mid)
            if ok(candidate[1], candidate[2]):
                hi, best = mid, candidate
            else:
                lo = mid
    template, required, achieved = best
    report = CalibrationReport(
        delta_c=template.delta_c,
        lambda_lr=template.lambda_lr,
        lambda_pr=template.lambda_pr,
        required_rate=required,
        achieved_rate=achieved,
        feasible=True,
        j_u=j_u,
    )
    logger.info(
        "Calibrated LR template at j_u=%.4g: delta_c=%.4g, lambda_pr=%.4g, hidden rate %.4g/%.4g",
        j_u,
        template.delta_c,
        template.lambda_pr,
        achieved,
        required,
    )
    return template, report


def _place_strategies(
    rng: np.random.Generator,
    anchors: np.ndarray,
    strategies: List[Tuple[int, int, int, int]],
    weights: np.ndarray,
    skip: int,
    j_u: float,
    sequences: List[List[np.ndarray]],
) -> None:
    """
    Attach strategy tags to anchor tags already recorded at index skip.

    Pair time t0 = anchor - U[0, j_u]; every other detected tag lands at
    t0 + U[0, j_u].
    """
    if len(anchors) == 0 or not strategies:
        return
    picks = rng.choice(len(strategies), size=len(anchors), p=weights)
    chosen = np.asarray(strategies)[picks]
    t0 = anchors - rng.uniform(0.0, j_u, len(anchors))
    for index in range(4):
        if index == skip:
            continue
        mask = chosen[:, index] == 1
        sequences[index].append(t0[mask] + rng.uniform(0.0, j_u, int(mask.sum())))


def generate_lr_assignment(
    template: LRTemplate,
    config: SourceConfig,
    trial_id: int = 0,
    seed: Optional[int] = None,
) -> LRAssignment:
    """
    All four tag sequences of one LR trial, generated without the settings.

    Stages: A2 tags at rate p^A_2; per-tag hidden rates from the LP; hidden
    22 partners at separation ~ J(., 3 j_u), the first of which is split
    into three equal jumps through B1 and A1; B2 filled to the uniform
    partner intensity by thinning; remaining coincidences and singles drawn
    from the LR strategies.
    """
    if config.jitter.kind != "uniform":
        raise ValueError("the LR source mimics uniform jitter only")
    j_u = config.jitter.width
    rng = trial_rng(config.seed if seed is None else seed, trial_id)
    start, stop = -config.lead, config.t_win + config.lead
    kernel = TriangleDensity(width=3.0 * j_u)
    # index order d_a1, d_a2, d_b1, d_b2
    sequences: List[List[np.ndarray]] = [[], [], [], []]

    # Step 1: A2 tags
    a2 = poisson_times(rng, template.p_prime.marginal_a(S22), start, stop)
    sequences[1].append(a2)

    # Step 2: hidden rates and partners
    rates = hidden_rates(a2, template, j_u)
    n_partners = rng.poisson(rates)
    hidden = n_partners > 0
    b2_extra: List[np.ndarray] = []
    for t, count in zip(a2[hidden], n_partners[hidden]):
        seps = triangle_sample(kernel, rng, int(count))
        first = seps[0]
        sequences[2].append(np.array([t + first / 3.0]))
        sequences[0].append(np.array([t + 2.0 * first / 3.0]))
        sequences[3].append(np.array([t + first]))
        if count > 1:
            b2_extra.append(t + seps[1:])

    # Step 3: non-hidden A2 tags take an LR strategy with d_a2 = 1
    strategies, weights = template.conditional(a2=1)
    _place_strategies(rng, a2[~hidden], strategies, weights, 1, j_u, sequences)

    # Step 4: B2 fill up to the uniform partner intensity
    bound = _rate_bound(template)
    candidates = poisson_times(rng, bound, start, stop)
    if len(candidates):
        room = np.clip(bound - _partner_intensity(candidates, a2, rates, kernel), 0.0, bound)
        fill = candidates[rng.random(len(candidates)) * bound < room]
    else:
        fill = np.empty(0)
    b2_free = np.concatenate([fill] + b2_extra) if b2_extra else fill
    sequences[3].append(b2_free)
    strategies, weights = template.conditional(a2=0, b2=1)
    _place_strategies(rng, b2_free, strategies, weights, 3, j_u, sequences)

    # Step 5: events with neither A2 nor B2
    residual = poisson_times(rng, template.rate(a2=0, b2=0), start, stop)
    strategies, weights = template.conditional(a2=0, b2=0)
    if len(residual) and strategies:
        picks = np.asarray(strategies)[rng.choice(len(strategies), size=len(residual), p=weights)]
        for index in (0, 2):
            mask = picks[:, index] == 1
            sequences[index].append(residual[mask] + rng.uniform(0.0, j_u, int(mask.sum())))

    tags = [clip_sorted(np.concatenate(parts) if parts else np.empty(0), config.t_win) for parts in sequences]
    return LRAssignment(d_a1=tags[0], d_a2=tags[1], d_b1=tags[2], d_b2=tags[3])


def generate_lr_trial(
    template: LRTemplate,
    config: SourceConfig,
    settings: SettingsPair,
    trial_id: int = 0,
    seed: Optional[int] = None,
) -> TrialRecord:
    assignment = generate_lr_assignment(template, config, trial_id=trial_id, seed=seed)
    return TrialRecord(
        id=trial_id,
        settings=settings,
        outcome_a=assignment.outcome_a(settings.a),
        outcome_b=assignment.outcome_b(settings.b),
    )
