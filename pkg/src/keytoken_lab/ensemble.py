"""Multi-sample generation math: correlated failures, voting rules, effective key error.

A key-token failure splits into a systematic part (probability s, shared by
every sample drawn from the same model state) and an idiosyncratic part
(probability q, independent per sample).  The marginal per-sample failure is
e = s + (1-s)q and the pairwise failure correlation works out to

    rho = [s + (1-s)q^2 - e^2] / (e(1-e))

which runs from 0 (s=0, independent) to 1 (q=0, perfectly shared).  A
selection rule applied to m samples turns the marginal e into an effective
rate e_eff; the correction factor f = e_eff / e approaches 1 as rho -> 1,
since no amount of resampling removes a shared failure.

The selection math here is the per-key-decision idealization (each key
decision resolved independently by the ensemble); sequence-level voting is
the simulator's job.  All functions are pure over frozen values.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Union

from .model_core import TwoRateModel, sequence_success_probability

__all__ = [
    "ErrorDecomposition",
    "MajorityVote",
    "OracleAnyCorrect",
    "ThresholdVote",
    "SelectionRule",
    "EnsembleSpec",
    "UndefinedCorrelationError",
    "NoDecompositionError",
    "ZeroMarginalError",
    "marginal_key_error",
    "correlation_of",
    "decomposition_from",
    "selection_failure_probability",
    "effective_key_error",
    "correction_factor",
    "ensemble_sequence_success",
]

# guards float products like 0.2*5 = 1.0000000000000002 in ceil()
_CEIL_EPS = 1e-12


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined when the marginal failure rate is 0 or 1."""


class NoDecompositionError(ValueError):
    """The (e_key, rho) pair could not be bracketed by the root search."""


class ZeroMarginalError(ZeroDivisionError):
    """Correction factor is undefined at marginal key error 0."""


@dataclass(frozen=True)
class ErrorDecomposition:
    """Systematic (shared) failure probability s and idiosyncratic (per-sample) q."""

    s: float
    q: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.s <= 1.0):
            raise ValueError(f"s must be in [0, 1], got {self.s}")
        if not (0.0 <= self.q <= 1.0):
            raise ValueError(f"q must be in [0, 1], got {self.q}")


@dataclass(frozen=True)
class MajorityVote:
    """Fails when failures > m/2; an exact tie (even m) fails iff tie_fails."""

    tie_fails: bool = True


@dataclass(frozen=True)
class OracleAnyCorrect:
    """Succeeds iff at least one sample is correct (best-of-N with a perfect verifier)."""


@dataclass(frozen=True)
class ThresholdVote:
    """Fails when correct samples < ceil(required_fraction * m)."""

    required_fraction: float

    def __post_init__(self) -> None:
        if not (0.0 < self.required_fraction <= 1.0):
            raise ValueError(
                f"required_fraction must be in (0, 1], got {self.required_fraction}"
            )


SelectionRule = Union[MajorityVote, OracleAnyCorrect, ThresholdVote]


@dataclass(frozen=True)
class EnsembleSpec:
    """m samples, a failure decomposition, and the rule that aggregates them."""

    m: int
    decomposition: ErrorDecomposition
    rule: SelectionRule

    def __post_init__(self) -> None:
        if not (isinstance(self.m, int) and self.m >= 1):
            raise ValueError(f"m must be a positive integer, got {self.m}")


def marginal_key_error(d: ErrorDecomposition) -> float:
    """Per-sample failure probability s + (1-s)q."""
    return d.s + (1.0 - d.s) * d.q


def correlation_of(d: ErrorDecomposition) -> float:
    """Pearson correlation of two samples' failure indicators X_a = S or I_a.

    With P(S)=s and independent P(I_a)=q, the joint failure is
    P(X_1 and X_2) = s + (1-s)q^2, giving
    rho = [P(X_1 and X_2) - e^2] / (e(1-e)).
    """
    e = marginal_key_error(d)
    if e <= 0.0 or e >= 1.0:
        raise UndefinedCorrelationError(
            f"correlation undefined at marginal failure {e}"
        )
    joint = d.s + (1.0 - d.s) * d.q * d.q
    return (joint - e * e) / (e * (1.0 - e))


def decomposition_from(e_key: float, rho: float) -> ErrorDecomposition:
    """Invert (marginal, correlation) back to the unique (s, q) decomposition.

    Solved by bisection in s over [0, e_key] (rho is monotone increasing in s
    at fixed marginal) to absolute tolerance 1e-12.
    """
    if not (0.0 < e_key < 1.0):
        raise ValueError(f"e_key must be in (0, 1), got {e_key}")
    if not (0.0 <= rho <= 1.0):
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if rho == 0.0:
        return ErrorDecomposition(s=0.0, q=e_key)
    if rho == 1.0:
        return ErrorDecomposition(s=e_key, q=0.0)

    def rho_at(s: float) -> float:
        q = (e_key - s) / (1.0 - s)
        return correlation_of(ErrorDecomposition(s=s, q=q))

    lo, hi = 0.0, e_key
    f_lo = -rho           # rho_at(0) == 0
    f_hi = 1.0 - rho      # rho_at(e_key) == 1
    if f_lo > 0.0 or f_hi < 0.0:
        raise NoDecompositionError(
            f"root not bracketed for e_key={e_key}, rho={rho}"
        )
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if rho_at(mid) < rho:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    q = (e_key - s) / (1.0 - s)
    return ErrorDecomposition(s=s, q=q)


def _idiosyncratic_failure(rule: SelectionRule, m: int, q: float) -> float:
    """Rule failure probability when failures ~ Binomial(m, q), by exact summation."""
    if isinstance(rule, MajorityVote):
        def fails(j: int) -> bool:
            if 2 * j > m:
                return True
            return 2 * j == m and rule.tie_fails
    elif isinstance(rule, OracleAnyCorrect):
        def fails(j: int) -> bool:
            return j == m
    elif isinstance(rule, ThresholdVote):
        required = math.ceil(rule.required_fraction * m - _CEIL_EPS)
        def fails(j: int) -> bool:
            return m - j < required
    else:
        raise TypeError(f"unknown selection rule: {rule!r}")
    total = 0.0
    for j in range(m + 1):
        if fails(j):
            total += math.comb(m, j) * q**j * (1.0 - q) ** (m - j)
    return min(1.0, total)


def selection_failure_probability(spec: EnsembleSpec) -> float:
    """Exact failure probability of the rule at one key decision.

    A systematic event (probability s) fails every sample identically, so no
    rule recovers from it; otherwise idiosyncratic failures are
    Binomial(m, q) and the rule decides.
    """
    d = spec.decomposition
    return d.s + (1.0 - d.s) * _idiosyncratic_failure(spec.rule, spec.m, d.q)


def effective_key_error(spec: EnsembleSpec) -> float:
    """The ensemble's per-key-decision error rate (alias of selection_failure_probability)."""
    return selection_failure_probability(spec)


def correction_factor(spec: EnsembleSpec) -> float:
    """effective_key_error / marginal_key_error; 1 at m=1 and as rho -> 1."""
    e = marginal_key_error(spec.decomposition)
    if e == 0.0:
        raise ZeroMarginalError("correction factor undefined at marginal key error 0")
    return effective_key_error(spec) / e


def ensemble_sequence_success(model: TwoRateModel, n: int, spec: EnsembleSpec) -> float:
    """Sequence success with e_key replaced by the ensemble's effective rate.

    Each key decision is idealized as independently resolved by the ensemble;
    the non-key term is unchanged.  spec.decomposition supersedes model.e_key
    for the key term.  The simulator provides the sequence-level
    (vote-once-per-sequence) ground truth.
    """
    e_eff = effective_key_error(spec)
    return sequence_success_probability(dataclasses.replace(model, e_key=e_eff), n)
