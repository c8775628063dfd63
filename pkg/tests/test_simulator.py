"""Simulator tests: trace semantics, determinism, and analytic-oracle agreement."""

import itertools
import math

import numpy as np
import pytest

from keytoken_lab.ensemble import (
    EnsembleSpec,
    ErrorDecomposition,
    MajorityVote,
    OracleAnyCorrect,
)
from keytoken_lab.model_core import (
    Bounded,
    Constant,
    LinearFraction,
    Logarithmic,
    PowerDecay,
    TwoRateModel,
    any_disruptive_probability,
)
from keytoken_lab.simulator import (
    Criterion,
    EvenlySpaced,
    Explicit,
    GenerationConfig,
    InsufficientErrorsError,
    InterventionPlan,
    Strategy,
    TokenOutcome,
    UniformRandom,
    config_with_length,
    error_clustering_stats,
    greedy_allocation,
    intervention_experiment,
    post_intervention_rates,
    simulate_batch,
    simulate_ensemble,
    simulate_sequence,
    staircase_curve,
)


def make_config(
    e_key=0.1,
    e0=0.0,
    growth=None,
    n=50,
    criterion=Criterion.KEY_TOKENS_ONLY,
    **kwargs,
):
    model = TwoRateModel(
        e_key=e_key, non_key=Constant(e0), growth=growth or Bounded(k_max=5, ramp=1.0)
    )
    return GenerationConfig(n=n, model=model, criterion=criterion, **kwargs)


def within_3_sigma(rate, p, trials):
    sigma = math.sqrt(max(p * (1.0 - p), 1e-12) / trials)
    return abs(rate - p) <= 3.0 * sigma


def check_trace_invariants(trace):
    """Off-manifold only after an unrecovered disruption; ids change only at jumps/recoveries."""
    outcomes = trace.outcomes
    ids = trace.manifold_ids
    off_manifold = False
    prev_id = 0
    for i, out in enumerate(outcomes):
        delta = ids[i] - prev_id
        if out == TokenOutcome.OFF_MANIFOLD_CONTINUATION:
            assert off_manifold, f"position {i}: continuation without prior disruption"
            assert delta == 0
        elif out == TokenOutcome.DISRUPTIVE_ERROR:
            # one jump, plus one recovery increment if it ended an off-manifold run
            assert delta == (2 if off_manifold else 1)
            off_manifold = True
        else:
            assert delta == (1 if off_manifold else 0)  # recovery increments exactly once
            off_manifold = False
        prev_id = ids[i]


class TestTraces:
    def test_noiseless_all_correct(self):
        cfg = make_config(e_key=0.0, e0=0.0)
        trace = simulate_sequence(cfg, 123)
        assert np.all(trace.outcomes == TokenOutcome.CORRECT)
        assert np.all(trace.manifold_ids == 0)

    def test_certain_error_hits_first_key_position(self):
        cfg = make_config(e_key=1.0, n=20, growth=Bounded(k_max=4, ramp=1.0))
        trace = simulate_sequence(cfg, 9)
        key_first = (1 * 20 + 4 - 1) // 4 - 1  # first evenly-spaced position, 0-based
        assert trace.outcomes[key_first] == TokenOutcome.DISRUPTIVE_ERROR

    def test_absorbing_mode(self):
        cfg = make_config(e_key=1.0, n=30, persistence=1.0, recovery_enabled=False)
        trace = simulate_sequence(cfg, 5)
        first = int(np.argmax(trace.outcomes == TokenOutcome.DISRUPTIVE_ERROR))
        assert np.all(trace.outcomes[first + 1:] == TokenOutcome.OFF_MANIFOLD_CONTINUATION)

    def test_no_recovery_is_absorbing_even_below_full_persistence(self):
        cfg = make_config(e_key=1.0, n=30, persistence=0.2, recovery_enabled=False)
        trace = simulate_sequence(cfg, 5)
        first = int(np.argmax(trace.outcomes == TokenOutcome.DISRUPTIVE_ERROR))
        assert np.all(trace.outcomes[first + 1:] == TokenOutcome.OFF_MANIFOLD_CONTINUATION)

    @pytest.mark.parametrize("seed", range(25))
    def test_invariants_under_churn(self, seed):
        cfg = make_config(
            e_key=0.3,
            e0=0.05,
            n=120,
            growth=Bounded(k_max=12, ramp=1.0),
            minor_error_rate=0.8,
            persistence=0.7,
            recovery_enabled=True,
            criterion=Criterion.STRICT_ALL_TOKENS,
        )
        trace = simulate_sequence(cfg, seed)
        check_trace_invariants(trace)
        assert trace.outcomes.shape == (120,)

    def test_trace_deterministic(self):
        cfg = make_config(
            e_key=0.2, e0=0.02, minor_error_rate=0.5, persistence=0.5,
            key_placement=UniformRandom(), criterion=Criterion.STRICT_ALL_TOKENS,
        )
        a = simulate_sequence(cfg, 777)
        b = simulate_sequence(cfg, 777)
        assert np.array_equal(a.outcomes, b.outcomes)
        assert np.array_equal(a.manifold_ids, b.manifold_ids)
        assert a.seed == b.seed == 777


class TestBatches:
    def test_noiseless_batch_all_succeed(self):
        cfg = make_config(e_key=0.0)
        batch = simulate_batch(cfg, 1000, 1)
        assert batch.successes == 1000
        assert np.all(batch.per_position_error_counts == 0)

    def test_key_only_matches_analytic(self):
        cfg = make_config(e_key=0.1, n=10, growth=Bounded(k_max=3, ramp=1.0))
        batch = simulate_batch(cfg, 40_000, 7)
        assert within_3_sigma(batch.success_rate, 0.9**3, 40_000)

    def test_naive_anchor_config(self):
        cfg = make_config(e_key=0.01, n=100, growth=LinearFraction(phi=1.0))
        batch = simulate_batch(cfg, 100_000, 21)
        assert within_3_sigma(batch.success_rate, 0.36603, 100_000)

    def test_strict_criterion_matches_full_product(self):
        # minor_error_rate = 1 makes every non-key slip visible, realizing the
        # two-rate product (1-e_key)^k * (1-e0)^(n-k)
        cfg = make_config(
            e_key=0.1, e0=0.01, n=10, growth=Bounded(k_max=3, ramp=1.0),
            minor_error_rate=1.0, criterion=Criterion.STRICT_ALL_TOKENS,
        )
        batch = simulate_batch(cfg, 40_000, 3)
        assert within_3_sigma(batch.success_rate, 0.9**3 * 0.99**7, 40_000)

    def test_batch_matches_per_trace_replay(self):
        cfg = make_config(
            e_key=0.15, e0=0.02, n=80, growth=Bounded(k_max=8, ramp=1.0),
            minor_error_rate=0.6, persistence=0.7, recovery_enabled=True,
            key_placement=UniformRandom(), criterion=Criterion.STRICT_ALL_TOKENS,
        )
        trials, base_seed = 400, 99
        successes = 0
        freq = np.zeros(cfg.n, dtype=np.int64)
        for t in range(trials):
            trace = simulate_sequence(cfg, base_seed + t)
            wrong = trace.outcomes != TokenOutcome.CORRECT
            freq += wrong
            successes += not wrong.any()
        batch = simulate_batch(cfg, trials, base_seed)
        assert batch.successes == successes
        assert np.array_equal(batch.per_position_error_counts, freq)

    def test_thread_count_invariance(self):
        cfg = make_config(
            e_key=0.1, e0=0.01, n=60, minor_error_rate=0.5, persistence=0.4,
            key_placement=UniformRandom(), criterion=Criterion.STRICT_ALL_TOKENS,
        )
        batches = [simulate_batch(cfg, 6000, 31, threads=t) for t in (1, 2, 8)]
        assert len({b.successes for b in batches}) == 1
        for b in batches[1:]:
            assert np.array_equal(
                b.per_position_error_counts, batches[0].per_position_error_counts
            )

    def test_persistence_does_not_move_key_only_success(self):
        base = dict(e_key=0.1, n=60, growth=Bounded(k_max=6, ramp=1.0))
        calm = simulate_batch(make_config(**base, persistence=0.0), 30_000, 13)
        stormy = simulate_batch(make_config(**base, persistence=0.95), 30_000, 14)
        p = (1.0 - 0.1) ** 6
        assert within_3_sigma(calm.success_rate, p, 30_000)
        assert within_3_sigma(stormy.success_rate, p, 30_000)

    def test_placement_invariance(self):
        base = dict(e_key=0.1, e0=0.01, n=100, growth=Bounded(k_max=10, ramp=1.0))
        even = simulate_batch(make_config(**base, key_placement=EvenlySpaced()), 30_000, 5)
        rand = simulate_batch(make_config(**base, key_placement=UniformRandom()), 30_000, 6)
        p = (1.0 - 0.1) ** 10
        assert within_3_sigma(even.success_rate, p, 30_000)
        assert within_3_sigma(rand.success_rate, p, 30_000)

    def test_union_bound_realized(self):
        cfg = make_config(e_key=0.03, n=200, growth=Bounded(k_max=12, ramp=1.0))
        trials = 30_000
        batch = simulate_batch(cfg, trials, 17)
        empirical_any = 1.0 - batch.success_rate
        bound = 12 * 0.03
        sigma = math.sqrt(empirical_any * (1 - empirical_any) / trials)
        assert empirical_any <= bound + 3 * sigma

    def test_config_validation(self):
        with pytest.raises(ValueError):
            make_config(n=0)
        with pytest.raises(ValueError):
            make_config(persistence=1.5)
        with pytest.raises(ValueError):
            make_config(key_placement=Explicit(positions=(1, 1, 2, 3, 4)))
        with pytest.raises(ValueError):
            make_config(key_placement=Explicit(positions=(1, 2, 3)))  # k = 5
        with pytest.raises(ValueError):
            make_config(key_error_rates=(0.1, 0.2))  # k = 5
        with pytest.raises(ValueError):
            simulate_batch(make_config(), 0, 1)

    def test_explicit_placement_used(self):
        cfg = make_config(
            e_key=1.0, n=10, growth=Bounded(k_max=2, ramp=1.0),
            key_placement=Explicit(positions=(2, 9)), persistence=0.0,
        )
        trace = simulate_sequence(cfg, 4)
        assert trace.outcomes[1] == TokenOutcome.DISRUPTIVE_ERROR
        assert trace.outcomes[8] == TokenOutcome.DISRUPTIVE_ERROR


class TestClustering:
    def test_insufficient_errors(self):
        with pytest.raises(InsufficientErrorsError):
            error_clustering_stats(make_config(e_key=0.0), 50, 1)

    def test_persistence_clusters_errors(self):
        model = TwoRateModel(e_key=0.05, non_key=Constant(0.0), growth=LinearFraction(phi=0.1))
        cfg = GenerationConfig(n=500, model=model, persistence=0.9, recovery_enabled=True)
        stats = error_clustering_stats(cfg, 2000, 11)
        assert stats.lag1_autocorrelation > 0.2
        assert stats.mean_error_run_length > stats.independent_baseline_run_length

    def test_independent_errors_uncorrelated(self):
        model = TwoRateModel(e_key=0.05, non_key=Constant(0.0), growth=LinearFraction(phi=1.0))
        cfg = GenerationConfig(n=1000, model=model, persistence=0.0, recovery_enabled=True)
        stats = error_clustering_stats(cfg, 2000, 13)
        assert stats.total_tokens >= 10**6
        assert abs(stats.lag1_autocorrelation) < 0.02
        assert stats.mean_error_run_length == pytest.approx(
            stats.independent_baseline_run_length, rel=0.05
        )


def sequence_level_failure(rule, m, s, q, k):
    """Independent sequence-level oracle under KeyTokensOnly.

    A systematic event at any of the k junctions fails every sample; otherwise
    samples fail independently with probability 1 - (1-q)^k.  Enumerates all
    2^m idiosyncratic sample vectors.
    """
    p_all_clear = (1.0 - s) ** k
    q_seq = 1.0 - (1.0 - q) ** k
    idio = 0.0
    for vector in itertools.product((0, 1), repeat=m):
        fails = sum(vector)
        weight = (q_seq**fails) * ((1.0 - q_seq) ** (m - fails))
        if isinstance(rule, MajorityVote):
            failed = fails * 2 > m or (fails * 2 == m and rule.tie_fails)
        else:  # OracleAnyCorrect
            failed = fails == m
        if failed:
            idio += weight
    return (1.0 - p_all_clear) + p_all_clear * idio


class TestEnsembleSimulation:
    def test_single_sample_matches_batch(self):
        cfg = make_config(e_key=0.2, n=40, growth=Bounded(k_max=4, ramp=1.0))
        spec = EnsembleSpec(1, ErrorDecomposition(0.0, 0.2), MajorityVote())
        ens = simulate_ensemble(cfg, spec, 20_000, 3)
        batch = simulate_batch(cfg, 20_000, 3)
        sigma = math.sqrt(batch.success_rate * (1 - batch.success_rate) / 20_000)
        assert abs(ens.success_rate - batch.success_rate) <= 3 * math.sqrt(2) * sigma

    @pytest.mark.parametrize("m", [1, 3, 5, 7])
    def test_matches_sequence_level_enumeration(self, m):
        s, q, k = 0.05, 0.15, 4
        cfg = make_config(e_key=0.2, n=40, growth=Bounded(k_max=k, ramp=1.0))
        spec = EnsembleSpec(m, ErrorDecomposition(s, q), MajorityVote())
        trials = 20_000
        ens = simulate_ensemble(cfg, spec, trials, 101 + m)
        expected = 1.0 - sequence_level_failure(MajorityVote(), m, s, q, k)
        assert within_3_sigma(ens.success_rate, expected, trials)

    def test_oracle_rule_sequence_level(self):
        s, q, k = 0.0, 0.3, 3
        cfg = make_config(e_key=0.3, n=30, growth=Bounded(k_max=k, ramp=1.0))
        spec = EnsembleSpec(4, ErrorDecomposition(s, q), OracleAnyCorrect())
        ens = simulate_ensemble(cfg, spec, 20_000, 55)
        expected = 1.0 - sequence_level_failure(OracleAnyCorrect(), 4, s, q, k)
        assert within_3_sigma(ens.success_rate, expected, 20_000)

    def test_systematic_floor_single_junction(self):
        # q = 0: success is exactly surviving the shared event at the one junction
        cfg = make_config(e_key=0.3, n=30, growth=Bounded(k_max=1, ramp=1.0))
        for m in (1, 3, 5):
            spec = EnsembleSpec(m, ErrorDecomposition(0.3, 0.0), MajorityVote())
            ens = simulate_ensemble(cfg, spec, 20_000, 200 + m)
            assert within_3_sigma(ens.success_rate, 0.7, 20_000)

    def test_thread_invariance(self):
        cfg = make_config(e_key=0.2, n=40, growth=Bounded(k_max=4, ramp=1.0))
        spec = EnsembleSpec(3, ErrorDecomposition(0.1, 0.2), MajorityVote())
        a = simulate_ensemble(cfg, spec, 5000, 9, threads=1)
        b = simulate_ensemble(cfg, spec, 5000, 9, threads=4)
        assert a.successes == b.successes


class TestStaircase:
    def test_flat_past_saturation(self):
        cfg = make_config(e_key=0.05, growth=Bounded(k_max=20, ramp=1.0), n=100)
        curve = staircase_curve(cfg, [100, 1000, 10_000], 5000, 70)
        p = (1.0 - 0.05) ** 20
        for _, rate in curve.points:
            assert within_3_sigma(rate, p, 5000)

    def test_matches_analytic_across_regimes(self):
        cfg = make_config(e_key=0.05, growth=Logarithmic(a=2.0), n=10)
        curve = staircase_curve(cfg, [10, 100, 1000], 5000, 80)
        for n, rate in curve.points:
            p = 1.0 - any_disruptive_probability(cfg.model, n)
            assert within_3_sigma(rate, p, 5000)

    def test_rejects_explicit_placement(self):
        cfg = make_config(
            n=10, growth=Bounded(k_max=2, ramp=1.0), key_placement=Explicit(positions=(2, 9))
        )
        with pytest.raises(ValueError):
            config_with_length(cfg, 20)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            staircase_curve(make_config(), [10, 10], 100, 1)


class TestInterventions:
    def test_greedy_picks_max(self):
        plan = InterventionPlan(1, 0.1, Strategy.GREEDY_BY_ERROR_RATE, (0.1, 0.4, 0.2))
        assert greedy_allocation(plan) == (1,)

    def test_zero_budget(self):
        plan = InterventionPlan(0, 0.1, Strategy.GREEDY_BY_ERROR_RATE, (0.1, 0.4, 0.2))
        assert greedy_allocation(plan) == ()

    def test_ties_break_low_index(self):
        plan = InterventionPlan(1, 0.1, Strategy.GREEDY_BY_ERROR_RATE, (0.3, 0.3, 0.1))
        assert greedy_allocation(plan) == (0,)

    def test_exhaustive_subset_oracle(self):
        rng = np.random.default_rng(12)
        r = 0.1
        for _ in range(10):
            rates = tuple(rng.uniform(0.01, 0.5, size=8).tolist())
            for budget in range(1, 5):
                plan = InterventionPlan(budget, r, Strategy.GREEDY_BY_ERROR_RATE, rates)
                chosen = set(greedy_allocation(plan))

                def product(sel):
                    out = 1.0
                    for j, e in enumerate(rates):
                        out *= 1.0 - (e * r if j in sel else e)
                    return out

                best = max(product(set(c)) for c in itertools.combinations(range(8), budget))
                assert product(chosen) == best

    def test_full_budget_strategies_identical(self):
        rates = (0.3, 0.1, 0.25, 0.05)
        cfg = make_config(
            e_key=0.2, n=40, growth=Bounded(k_max=4, ramp=1.0), key_error_rates=rates
        )
        plan = InterventionPlan(4, 0.2, Strategy.GREEDY_BY_ERROR_RATE, rates)
        outcomes = intervention_experiment(cfg, plan, 4000, 42)
        successes = {oc.batch.successes for oc in outcomes.values()}
        assert len(successes) == 1  # same rates, same seeds, byte-equal results
        for oc in outcomes.values():
            assert oc.rates == pytest.approx(tuple(e * 0.2 for e in rates))

    def test_perfect_tools_leave_non_key_term(self):
        rates = (0.3, 0.1, 0.25, 0.05)
        cfg = make_config(
            e_key=0.2, e0=0.01, n=40, growth=Bounded(k_max=4, ramp=1.0),
            minor_error_rate=1.0, criterion=Criterion.STRICT_ALL_TOKENS,
            key_error_rates=rates,
        )
        plan = InterventionPlan(4, 0.0, Strategy.GREEDY_BY_ERROR_RATE, rates)
        outcomes = intervention_experiment(cfg, plan, 20_000, 8)
        expected = 0.99**36  # only the 36 non-key positions can fail
        for oc in outcomes.values():
            assert within_3_sigma(oc.batch.success_rate, expected, 20_000)

    def test_greedy_beats_random_on_average(self):
        rng = np.random.default_rng(3)
        rates = tuple(rng.uniform(0.02, 0.4, size=12).tolist())
        cfg = make_config(
            e_key=0.2, n=60, growth=Bounded(k_max=12, ramp=1.0), key_error_rates=rates
        )
        plan = InterventionPlan(3, 0.1, Strategy.GREEDY_BY_ERROR_RATE, rates)
        greedy_rates, random_rates = [], []
        for seed in range(40):
            outcomes = intervention_experiment(cfg, plan, 500, 1000 + seed * 997)
            greedy_rates.append(outcomes[Strategy.GREEDY_BY_ERROR_RATE].batch.success_rate)
            random_rates.append(outcomes[Strategy.RANDOM_SUBSET].batch.success_rate)
        assert np.mean(greedy_rates) >= np.mean(random_rates)

    def test_uniform_dilution(self):
        plan = InterventionPlan(2, 0.1, Strategy.UNIFORM, (0.2, 0.4))
        assert post_intervention_rates(plan) == pytest.approx((0.02, 0.04))
        half = InterventionPlan(1, 0.1, Strategy.UNIFORM, (0.2, 0.4))
        assert post_intervention_rates(half) == pytest.approx((0.2 * 0.55, 0.4 * 0.55))

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            InterventionPlan(5, 0.1, Strategy.UNIFORM, (0.1, 0.2))
        with pytest.raises(ValueError):
            InterventionPlan(1, 1.0, Strategy.UNIFORM, (0.1, 0.2))
