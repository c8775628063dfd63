"""Monte Carlo ground truth for the two-rate sequence model.

Generation is simulated token by token: key positions take a disruptive-error
draw, non-key positions take a minor-slip draw while on-manifold, and a
disruptive error moves the trace onto a new manifold patch where each
following token stays off-manifold with probability `persistence` until a
recovery (if enabled) returns it.  Everything downstream of a seed is
bit-deterministic, so analytic claims can be validated against trial batches
and replayed exactly.

Randomness contract: trial t of a batch uses seed = base_seed + t.  Within a
trial a single PCG64 stream is consumed on a fixed, config-determined
schedule: placement draw (UniformRandom only), systematic mask (ensemble
only), one uniform per key position, one uniform per non-key position
(allocated only when e0 * minor_error_rate > 0), then one geometric draw per
off-manifold episode.  simulate_sequence and the batch runners share this
schedule, so a single trace replays any batch trial.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .ensemble import EnsembleSpec, MajorityVote, OracleAnyCorrect, SelectionRule, ThresholdVote
from .model_core import Constant, ReliabilityCurve, TwoRateModel, key_count

__all__ = [
    "EvenlySpaced",
    "UniformRandom",
    "Explicit",
    "KeyPlacement",
    "Criterion",
    "TokenOutcome",
    "GenerationConfig",
    "SequenceTrace",
    "TrialBatch",
    "EnsembleBatch",
    "ClusterStats",
    "Strategy",
    "InterventionPlan",
    "InterventionOutcome",
    "InsufficientErrorsError",
    "simulate_sequence",
    "simulate_batch",
    "error_clustering_stats",
    "simulate_ensemble",
    "staircase_curve",
    "config_with_length",
    "greedy_allocation",
    "post_intervention_rates",
    "intervention_experiment",
    "wilson_interval",
]

_CHUNK = 2048  # fixed so chunk boundaries never depend on thread count
_Z95 = 1.959963984540054


class InsufficientErrorsError(ValueError):
    """Clustering statistics need at least two observed errors."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvenlySpaced:
    """Key positions at ceil(j*n/k) for j = 1..k."""


@dataclass(frozen=True)
class UniformRandom:
    """Key positions drawn per trial, uniformly without replacement."""


@dataclass(frozen=True)
class Explicit:
    """Fixed 1-based key positions."""

    positions: tuple[int, ...]


KeyPlacement = Union[EvenlySpaced, UniformRandom, Explicit]


class Criterion(Enum):
    STRICT_ALL_TOKENS = "strict_all_tokens"
    KEY_TOKENS_ONLY = "key_tokens_only"


class TokenOutcome(IntEnum):
    CORRECT = 0
    MINOR_ERROR = 1
    DISRUPTIVE_ERROR = 2
    OFF_MANIFOLD_CONTINUATION = 3


@dataclass(frozen=True)
class GenerationConfig:
    """One simulated generation setup.

    minor_error_rate is the probability that a non-key slip is emitted as a
    visible MinorError rather than silently corrected, so the observable
    minor-error rate at position i is e_non(i) * minor_error_rate.  With
    recovery disabled the off-manifold state is absorbing regardless of
    persistence.  key_error_rates, when given, replaces the model's e_key
    with one rate per key junction (in position order).
    """

    n: int
    model: TwoRateModel
    key_placement: KeyPlacement = EvenlySpaced()
    minor_error_rate: float = 0.0
    persistence: float = 0.0
    recovery_enabled: bool = True
    criterion: Criterion = Criterion.KEY_TOKENS_ONLY
    key_error_rates: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (0.0 <= self.minor_error_rate <= 1.0):
            raise ValueError(f"minor_error_rate must be in [0, 1], got {self.minor_error_rate}")
        if not (0.0 <= self.persistence <= 1.0):
            raise ValueError(f"persistence must be in [0, 1], got {self.persistence}")
        k = self.key_count
        if isinstance(self.key_placement, Explicit):
            pos = self.key_placement.positions
            if len(set(pos)) != len(pos):
                raise ValueError("explicit key positions must be distinct")
            if any(p < 1 or p > self.n for p in pos):
                raise ValueError(f"explicit key positions must lie in [1, {self.n}]")
            if len(pos) != k:
                raise ValueError(
                    f"explicit placement has {len(pos)} positions but the growth law gives k={k}"
                )
        if self.key_error_rates is not None:
            if len(self.key_error_rates) != k:
                raise ValueError(
                    f"key_error_rates has {len(self.key_error_rates)} entries but k={k}"
                )
            if any(not (0.0 <= r <= 1.0) for r in self.key_error_rates):
                raise ValueError("key_error_rates entries must be in [0, 1]")

    @property
    def key_count(self) -> int:
        return key_count(self.model.growth, self.n)

    @property
    def minor_possible(self) -> bool:
        return self.model.non_key.max_rate * self.minor_error_rate > 0.0


@dataclass(frozen=True, eq=False)
class SequenceTrace:
    """Per-token outcomes and manifold patch ids from one simulated generation."""

    outcomes: np.ndarray      # int8 TokenOutcome codes, length n
    manifold_ids: np.ndarray  # int64 patch ids, length n
    seed: int


@dataclass(frozen=True, eq=False)
class TrialBatch:
    """Aggregate of `trials` independent generations from seeds base_seed + t."""

    trials: int
    successes: int
    per_position_error_counts: np.ndarray  # int64, length n
    base_seed: int
    criterion: Criterion

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def confidence_interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.trials)


@dataclass(frozen=True, eq=False)
class EnsembleBatch:
    """Sequence-level selection outcomes over `trials` ensemble draws."""

    trials: int
    successes: int
    base_seed: int
    m: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def confidence_interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.trials)


@dataclass(frozen=True)
class ClusterStats:
    """Clustering of wrong-token indicators across a batch of traces."""

    lag1_autocorrelation: float
    mean_error_run_length: float
    independent_baseline_run_length: float
    total_errors: int
    total_tokens: int


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


# ---------------------------------------------------------------------------
# Single-trial engine
# ---------------------------------------------------------------------------

def _evenly_spaced_positions(n: int, k: int) -> np.ndarray:
    # ceil(j*n/k), 1-based, converted to 0-based; exact in integer arithmetic
    return np.array([(j * n + k - 1) // k - 1 for j in range(1, k + 1)], dtype=np.int64)


def _fixed_positions(config: GenerationConfig) -> Optional[np.ndarray]:
    """0-based key positions when the placement does not depend on the trial."""
    k = config.key_count
    if isinstance(config.key_placement, EvenlySpaced):
        return _evenly_spaced_positions(config.n, k)
    if isinstance(config.key_placement, Explicit):
        return np.sort(np.array(config.key_placement.positions, dtype=np.int64) - 1)
    return None


def _key_error_vector(config: GenerationConfig) -> np.ndarray:
    if config.key_error_rates is not None:
        return np.array(config.key_error_rates, dtype=np.float64)
    return np.full(config.key_count, config.model.e_key)


def _minor_thresholds(config: GenerationConfig, nonkey_pos: np.ndarray) -> np.ndarray:
    # decay evaluated at the global 1-based token position
    return config.model.non_key.rates(nonkey_pos + 1) * config.minor_error_rate


class _TrialEvents:
    """Events of one pass: disruptions, off-manifold spans, recoveries, minor slips."""

    __slots__ = ("disruptions", "spans", "recoveries", "minor_positions")

    def __init__(
        self,
        disruptions: list[int],
        spans: list[tuple[int, int]],
        recoveries: list[int],
        minor_positions: np.ndarray,
    ) -> None:
        self.disruptions = disruptions
        self.spans = spans
        self.recoveries = recoveries
        self.minor_positions = minor_positions

    def succeeded(self, criterion: Criterion) -> bool:
        if self.disruptions:
            return False
        if criterion is Criterion.STRICT_ALL_TOKENS:
            return self.minor_positions.size == 0
        return True

    def wrong_positions(self, n: int) -> np.ndarray:
        parts = [np.asarray(self.disruptions, dtype=np.int64), self.minor_positions]
        for a, b in self.spans:
            parts.append(np.arange(a, b, dtype=np.int64))
        return np.sort(np.concatenate(parts))


def _run_trial(
    config: GenerationConfig,
    rng: np.random.Generator,
    key_pos: Optional[np.ndarray],
    e_vec: np.ndarray,
    nonkey_pos: Optional[np.ndarray],
    thresholds: Optional[np.ndarray],
    force_fail: Optional[np.ndarray] = None,
) -> tuple[_TrialEvents, np.ndarray]:
    """One generation pass.  Returns (events, key positions used).

    key_pos is None for per-trial (UniformRandom) placement; force_fail marks
    key junctions that fail regardless of their draw (ensemble systematic
    events).
    """
    n = config.n
    k = e_vec.size
    if key_pos is None:
        key_pos = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
        mask = np.ones(n, dtype=bool)
        mask[key_pos] = False
        nonkey_pos = np.flatnonzero(mask)
        thresholds = _minor_thresholds(config, nonkey_pos) if config.minor_possible else None

    u_key = rng.random(k)
    fails = u_key < e_vec
    if force_fail is not None:
        fails |= force_fail

    minor_hits = np.empty(0, dtype=np.int64)
    if config.minor_possible:
        u_nk = rng.random(n - k)
        assert nonkey_pos is not None and thresholds is not None
        minor_hits = nonkey_pos[u_nk < thresholds]

    fail_idx = np.flatnonzero(fails)
    disruptions: list[int] = []
    spans: list[tuple[int, int]] = []
    recoveries: list[int] = []

    if fail_idx.size:
        absorbing = (not config.recovery_enabled) or config.persistence >= 1.0
        i_min = 0
        while True:
            fp = int(np.searchsorted(fail_idx, i_min))
            if fp >= fail_idx.size:
                break
            j = int(fail_idx[fp])
            p = int(key_pos[j])
            disruptions.append(p)
            if p == n - 1:
                break
            if absorbing:
                spans.append((p + 1, n))
                break
            g = int(rng.geometric(1.0 - config.persistence))
            rec = p + g
            if rec >= n:
                spans.append((p + 1, n))
                break
            if rec > p + 1:
                spans.append((p + 1, rec))
            recoveries.append(rec)
            # the recovered token is processed under normal on-manifold rules
            jr = int(np.searchsorted(key_pos, rec))
            if jr < k and key_pos[jr] == rec:
                i_min = jr  # its own key draw decides; may re-disrupt immediately
                if not fails[jr]:
                    i_min = jr + 1
            else:
                i_min = jr

    if spans and minor_hits.size:
        keep = np.ones(minor_hits.size, dtype=bool)
        for a, b in spans:
            keep &= ~((minor_hits >= a) & (minor_hits < b))
        minor_hits = minor_hits[keep]

    return _TrialEvents(disruptions, spans, recoveries, minor_hits), key_pos


def simulate_sequence(config: GenerationConfig, seed: int) -> SequenceTrace:
    """Simulate one generation; fully deterministic given (config, seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    key_pos = _fixed_positions(config)
    nonkey_pos = thresholds = None
    if key_pos is not None:
        mask = np.ones(config.n, dtype=bool)
        mask[key_pos] = False
        nonkey_pos = np.flatnonzero(mask)
        if config.minor_possible:
            thresholds = _minor_thresholds(config, nonkey_pos)
    events, _ = _run_trial(config, rng, key_pos, _key_error_vector(config), nonkey_pos, thresholds)

    outcomes = np.zeros(config.n, dtype=np.int8)
    outcomes[events.minor_positions] = TokenOutcome.MINOR_ERROR
    for a, b in events.spans:
        outcomes[a:b] = TokenOutcome.OFF_MANIFOLD_CONTINUATION
    outcomes[np.asarray(events.disruptions, dtype=np.int64)] = TokenOutcome.DISRUPTIVE_ERROR

    increments = np.zeros(config.n, dtype=np.int64)
    np.add.at(increments, np.asarray(events.disruptions, dtype=np.int64), 1)
    np.add.at(increments, np.asarray(events.recoveries, dtype=np.int64), 1)
    manifold_ids = np.cumsum(increments)

    return SequenceTrace(outcomes=outcomes, manifold_ids=manifold_ids, seed=seed)


# ---------------------------------------------------------------------------
# Batch runners
# ---------------------------------------------------------------------------

def _resolve_threads(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    return threads


def _run_chunked(
    trials: int,
    threads: int,
    worker: Callable[[int, int], tuple],
    reduce_fn: Callable[[Iterable[tuple]], tuple],
) -> tuple:
    """Split trials into fixed chunks and reduce results in chunk order."""
    bounds = [(start, min(start + _CHUNK, trials)) for start in range(0, trials, _CHUNK)]
    workers = _resolve_threads(threads)
    if workers <= 1 or len(bounds) == 1:
        parts = [worker(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: worker(*ab), bounds))
    return reduce_fn(parts)


def simulate_batch(
    config: GenerationConfig, trials: int, base_seed: int, threads: int = 1
) -> TrialBatch:
    """Run `trials` generations (seeds base_seed + t) and aggregate counts.

    All accumulators are integers, so the result is identical for any thread
    count.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    key_pos = _fixed_positions(config)
    e_vec = _key_error_vector(config)
    nonkey_pos = thresholds = None
    if key_pos is not None:
        mask = np.ones(config.n, dtype=bool)
        mask[key_pos] = False
        nonkey_pos = np.flatnonzero(mask)
        if config.minor_possible:
            thresholds = _minor_thresholds(config, nonkey_pos)

    def worker(start: int, stop: int) -> tuple[int, np.ndarray]:
        succ = 0
        freq = np.zeros(config.n, dtype=np.int64)
        for t in range(start, stop):
            rng = np.random.Generator(np.random.PCG64(base_seed + t))
            events, _ = _run_trial(config, rng, key_pos, e_vec, nonkey_pos, thresholds)
            succ += events.succeeded(config.criterion)
            if events.disruptions:
                np.add.at(freq, np.asarray(events.disruptions, dtype=np.int64), 1)
            for a, b in events.spans:
                freq[a:b] += 1
            if events.minor_positions.size:
                freq[events.minor_positions] += 1
        return succ, freq

    def reduce_fn(parts):
        total = 0
        freq = np.zeros(config.n, dtype=np.int64)
        for s, f in parts:
            total += s
            freq += f
        return total, freq

    successes, freq = _run_chunked(trials, threads, worker, reduce_fn)
    return TrialBatch(
        trials=trials,
        successes=successes,
        per_position_error_counts=freq,
        base_seed=base_seed,
        criterion=config.criterion,
    )


def error_clustering_stats(
    config: GenerationConfig, trials: int, base_seed: int, threads: int = 1
) -> ClusterStats:
    """Lag-1 autocorrelation and run lengths of the wrong-token indicator.

    Pairs never straddle trial boundaries.  The independent baseline run
    length is 1/(1 - p_hat) for the same marginal error rate.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    key_pos = _fixed_positions(config)
    e_vec = _key_error_vector(config)
    nonkey_pos = thresholds = None
    if key_pos is not None:
        mask = np.ones(config.n, dtype=bool)
        mask[key_pos] = False
        nonkey_pos = np.flatnonzero(mask)
        if config.minor_possible:
            thresholds = _minor_thresholds(config, nonkey_pos)

    def worker(start: int, stop: int) -> tuple[int, int, int]:
        wrong_total = 0
        pair_total = 0
        run_total = 0
        for t in range(start, stop):
            rng = np.random.Generator(np.random.PCG64(base_seed + t))
            events, _ = _run_trial(config, rng, key_pos, e_vec, nonkey_pos, thresholds)
            wrong = events.wrong_positions(config.n)
            if wrong.size == 0:
                continue
            wrong_total += wrong.size
            adjacent = int(np.count_nonzero(np.diff(wrong) == 1))
            pair_total += adjacent
            run_total += wrong.size - adjacent  # each run contributes hits - (hits-1) pairs
        return wrong_total, pair_total, run_total

    def reduce_fn(parts):
        w = p = r = 0
        for wi, pi, ri in parts:
            w += wi
            p += pi
            r += ri
        return w, p, r

    wrong_total, pair_total, run_total = _run_chunked(trials, threads, worker, reduce_fn)
    if wrong_total < 2:
        raise InsufficientErrorsError(
            f"need at least 2 errors to compute clustering stats, observed {wrong_total}"
        )
    n_tokens = trials * config.n
    n_pairs = trials * (config.n - 1)
    p_hat = wrong_total / n_tokens
    variance = p_hat * (1.0 - p_hat)
    if n_pairs == 0 or variance == 0.0:
        raise InsufficientErrorsError("degenerate indicator: no pairs or zero variance")
    lag1 = (pair_total / n_pairs - p_hat * p_hat) / variance
    return ClusterStats(
        lag1_autocorrelation=lag1,
        mean_error_run_length=wrong_total / run_total,
        independent_baseline_run_length=1.0 / (1.0 - p_hat),
        total_errors=wrong_total,
        total_tokens=n_tokens,
    )


def _rule_succeeds(rule: SelectionRule, correct: int, m: int) -> bool:
    failures = m - correct
    if isinstance(rule, MajorityVote):
        if 2 * failures > m:
            return False
        if 2 * failures == m:
            return not rule.tie_fails
        return True
    if isinstance(rule, OracleAnyCorrect):
        return correct >= 1
    if isinstance(rule, ThresholdVote):
        required = math.ceil(rule.required_fraction * m - 1e-12)
        return correct >= required
    raise TypeError(f"unknown selection rule: {rule!r}")


def simulate_ensemble(
    config: GenerationConfig,
    spec: EnsembleSpec,
    trials: int,
    base_seed: int,
    threads: int = 1,
) -> EnsembleBatch:
    """Sequence-level ensemble: shared systematic key failures, m idiosyncratic passes.

    Per trial, one systematic mask is drawn over the key junctions (probability
    s each, shared by every sample); each of the m samples then runs a full
    independent pass with idiosyncratic key-error rate q.  The selection rule
    aggregates per-sample correctness under config.criterion.
    spec.decomposition supersedes model.e_key for key draws.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    k = config.key_count
    key_pos = _fixed_positions(config)
    nonkey_pos = thresholds = None
    if key_pos is not None:
        mask = np.ones(config.n, dtype=bool)
        mask[key_pos] = False
        nonkey_pos = np.flatnonzero(mask)
        if config.minor_possible:
            thresholds = _minor_thresholds(config, nonkey_pos)
    q_vec = np.full(k, spec.decomposition.q)
    s = spec.decomposition.s

    def worker(start: int, stop: int) -> tuple[int]:
        succ = 0
        for t in range(start, stop):
            rng = np.random.Generator(np.random.PCG64(base_seed + t))
            trial_key_pos = key_pos
            trial_nonkey = nonkey_pos
            trial_thresholds = thresholds
            if trial_key_pos is None:
                trial_key_pos = np.sort(rng.choice(config.n, size=k, replace=False)).astype(np.int64)
                mask = np.ones(config.n, dtype=bool)
                mask[trial_key_pos] = False
                trial_nonkey = np.flatnonzero(mask)
                if config.minor_possible:
                    trial_thresholds = _minor_thresholds(config, trial_nonkey)
            systematic = rng.random(k) < s
            correct = 0
            for _ in range(spec.m):
                events, _ = _run_trial(
                    config, rng, trial_key_pos, q_vec, trial_nonkey, trial_thresholds,
                    force_fail=systematic,
                )
                correct += events.succeeded(config.criterion)
            succ += _rule_succeeds(spec.rule, correct, spec.m)
        return (succ,)

    def reduce_fn(parts):
        return (sum(p[0] for p in parts),)

    (successes,) = _run_chunked(trials, threads, worker, reduce_fn)
    return EnsembleBatch(trials=trials, successes=successes, base_seed=base_seed, m=spec.m)


def config_with_length(config: GenerationConfig, n: int) -> GenerationConfig:
    """The same setup at a different sequence length (placement policies only)."""
    if isinstance(config.key_placement, Explicit):
        raise ValueError("explicit key positions cannot be rescaled to a new length")
    if config.key_error_rates is not None and key_count(config.model.growth, n) != len(
        config.key_error_rates
    ):
        raise ValueError("heterogeneous junction rates do not match k at the new length")
    return GenerationConfig(
        n=n,
        model=config.model,
        key_placement=config.key_placement,
        minor_error_rate=config.minor_error_rate,
        persistence=config.persistence,
        recovery_enabled=config.recovery_enabled,
        criterion=config.criterion,
        key_error_rates=config.key_error_rates,
    )


def staircase_curve(
    config: GenerationConfig,
    n_values: list[int],
    trials: int,
    base_seed: int,
    threads: int = 1,
) -> ReliabilityCurve:
    """Empirical success rate per length; point j offsets trial seeds by j*trials."""
    if not n_values:
        raise ValueError("n_values must be non-empty")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    points = []
    for j, n in enumerate(n_values):
        batch = simulate_batch(config_with_length(config, n), trials, base_seed + j * trials, threads)
        points.append((n, batch.success_rate))
    return ReliabilityCurve(points=tuple(points), model_label="empirical")


# ---------------------------------------------------------------------------
# Budgeted interventions at key junctions
# ---------------------------------------------------------------------------

class Strategy(Enum):
    UNIFORM = "uniform"
    RANDOM_SUBSET = "random_subset"
    GREEDY_BY_ERROR_RATE = "greedy_by_error_rate"


@dataclass(frozen=True)
class InterventionPlan:
    """Budget B of junction interventions, each multiplying a junction's rate by r."""

    budget: int
    reduction: float
    strategy: Strategy
    junction_rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.budget > len(self.junction_rates):
            raise ValueError("budget exceeds the number of junctions")
        if not (0.0 <= self.reduction < 1.0):
            raise ValueError(f"reduction must be in [0, 1), got {self.reduction}")
        if any(not (0.0 <= r <= 1.0) for r in self.junction_rates):
            raise ValueError("junction_rates entries must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class InterventionOutcome:
    strategy: Strategy
    chosen: Optional[tuple[int, ...]]  # None for the diluted uniform strategy
    rates: tuple[float, ...]
    batch: TrialBatch


def greedy_allocation(plan: InterventionPlan) -> tuple[int, ...]:
    """The B junctions with the largest error rates, ties broken by lowest index."""
    order = sorted(range(len(plan.junction_rates)), key=lambda j: (-plan.junction_rates[j], j))
    return tuple(sorted(order[: plan.budget]))


def post_intervention_rates(
    plan: InterventionPlan, chosen: Optional[tuple[int, ...]] = None
) -> tuple[float, ...]:
    """Junction rates after applying the plan's strategy.

    UNIFORM spreads the budget as a diluted multiplier 1 - (1-r)*B/k on every
    junction (total reduction mass matches B full interventions, and B = k
    coincides exactly with reducing every junction by r).
    """
    rates = np.array(plan.junction_rates, dtype=np.float64)
    if plan.strategy is Strategy.UNIFORM:
        if plan.budget == len(plan.junction_rates):
            rates = rates * plan.reduction
        else:
            rates = rates * (1.0 - (1.0 - plan.reduction) * plan.budget / len(plan.junction_rates))
        return tuple(rates.tolist())
    if chosen is None:
        raise ValueError("subset strategies require the chosen junction set")
    for j in chosen:
        rates[j] *= plan.reduction
    return tuple(rates.tolist())


def intervention_experiment(
    config: GenerationConfig,
    plan: InterventionPlan,
    trials: int,
    base_seed: int,
    threads: int = 1,
) -> dict[Strategy, InterventionOutcome]:
    """Run simulate_batch under each strategy's post-intervention junction rates.

    The random subset is drawn once from base_seed; every strategy's batch
    reuses the same trial seeds, so differences are attributable to the rates.
    """
    k = config.key_count
    if len(plan.junction_rates) != k:
        raise ValueError(f"plan has {len(plan.junction_rates)} junction rates but k={k}")

    subset_rng = np.random.Generator(np.random.PCG64(base_seed))
    random_chosen = tuple(
        sorted(int(j) for j in subset_rng.choice(k, size=plan.budget, replace=False))
    )
    choices: dict[Strategy, Optional[tuple[int, ...]]] = {
        Strategy.UNIFORM: None,
        Strategy.RANDOM_SUBSET: random_chosen,
        Strategy.GREEDY_BY_ERROR_RATE: greedy_allocation(plan),
    }

    results: dict[Strategy, InterventionOutcome] = {}
    for strategy, chosen in choices.items():
        strat_plan = InterventionPlan(
            budget=plan.budget,
            reduction=plan.reduction,
            strategy=strategy,
            junction_rates=plan.junction_rates,
        )
        rates = post_intervention_rates(strat_plan, chosen)
        modified = GenerationConfig(
            n=config.n,
            model=config.model,
            key_placement=config.key_placement,
            minor_error_rate=config.minor_error_rate,
            persistence=config.persistence,
            recovery_enabled=config.recovery_enabled,
            criterion=config.criterion,
            key_error_rates=rates,
        )
        batch = simulate_batch(modified, trials, base_seed, threads)
        results[strategy] = InterventionOutcome(
            strategy=strategy, chosen=chosen, rates=rates, batch=batch
        )
    return results
