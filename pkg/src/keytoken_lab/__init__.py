"""Two-rate key-token reliability lab.

Closed-form reliability of long generated sequences under a two-rate
key/non-key error model, a deterministic Monte Carlo simulator that
validates the analytics, ensemble-selection math for correlated failures,
corpus metrics (LSD, key fraction, LongPPL, attention concentration), and
maximum-likelihood regime fitting with AIC selection.
"""

from .model_core import (
    Bounded,
    Constant,
    DecayClass,
    KeyTokenGrowth,
    LinearFraction,
    Logarithmic,
    NonKeyDecay,
    PowerDecay,
    PowerLaw,
    ReliabilityCurve,
    TwoRateModel,
    any_disruptive_probability,
    decay_class,
    disruptive_union_bound,
    key_count,
    naive_success_probability,
    reliability_curve,
    sequence_success_probability,
)
from .ensemble import (
    EnsembleSpec,
    ErrorDecomposition,
    MajorityVote,
    OracleAnyCorrect,
    ThresholdVote,
    correction_factor,
    correlation_of,
    decomposition_from,
    effective_key_error,
    ensemble_sequence_success,
    marginal_key_error,
    selection_failure_probability,
)
from .simulator import (
    ClusterStats,
    Criterion,
    EvenlySpaced,
    Explicit,
    GenerationConfig,
    InterventionPlan,
    SequenceTrace,
    Strategy,
    TokenOutcome,
    TrialBatch,
    UniformRandom,
    error_clustering_stats,
    greedy_allocation,
    intervention_experiment,
    simulate_batch,
    simulate_ensemble,
    simulate_sequence,
    staircase_curve,
)
from .corpus import (
    KeyTokenReport,
    TokenRecord,
    attention_concentration,
    classify_key,
    key_fraction_report,
    long_ppl,
    lsd,
    read_corpus,
    standard_ppl,
)
from .fitting import (
    FitResult,
    NaiveFamily,
    ObservationSet,
    TwoRateBoundedFamily,
    TwoRateLogFamily,
    TwoRatePowerFamily,
    fit,
    log_likelihood,
    predict,
    select_model,
)

__version__ = "0.1.0"
