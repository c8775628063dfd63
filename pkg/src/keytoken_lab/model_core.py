"""Closed-form reliability of long generated sequences under a two-rate error model.

A sequence of n tokens contains k(n) high-impact "key" tokens that fail with
probability e_key and n - k(n) locally-determined tokens whose error rate
e_non(i) is small and typically decays with position.  The chance of a fully
correct sequence is

    P(n) = (1 - e_key)^k(n) * prod_i (1 - e_non(i))

which, depending on how k grows with n, decays like a power law, a stretched
exponential, or plateaus at a constant — all far slower than the naive
uniform-rate exponential (1 - e)^n.

All probability products are evaluated as sums of log1p(-e) terms so that
n up to 1e6 stays numerically exact.  Every type here is an immutable value
and every function is pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

__all__ = [
    "Logarithmic",
    "PowerLaw",
    "Bounded",
    "LinearFraction",
    "KeyTokenGrowth",
    "Constant",
    "PowerDecay",
    "NonKeyDecay",
    "TwoRateModel",
    "ReliabilityCurve",
    "DecayClass",
    "RateOrderingWarning",
    "key_count",
    "naive_success_probability",
    "sequence_success_probability",
    "any_disruptive_probability",
    "disruptive_union_bound",
    "reliability_curve",
    "decay_class",
]


class RateOrderingWarning(UserWarning):
    """Key-token error rate is below the non-key rate; the model computes anyway."""


# ---------------------------------------------------------------------------
# Key-token count growth laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Logarithmic:
    """k(n) = ceil(a * ln n)."""

    a: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError(f"Logarithmic.a must be a positive real, got {self.a}")


@dataclass(frozen=True)
class PowerLaw:
    """k(n) = ceil(c * n**alpha) with 0 < alpha < 1."""

    c: float
    alpha: float

    def __post_init__(self) -> None:
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"PowerLaw.c must be a positive real, got {self.c}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"PowerLaw.alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class Bounded:
    """k(n) = min(k_max, ceil(ramp * n)); saturates at k_max for n >= k_max/ramp."""

    k_max: int
    ramp: float = 1.0

    def __post_init__(self) -> None:
        if not (isinstance(self.k_max, int) and self.k_max >= 1):
            raise ValueError(f"Bounded.k_max must be a positive integer, got {self.k_max}")
        if not (self.ramp > 0 and math.isfinite(self.ramp)):
            raise ValueError(f"Bounded.ramp must be a positive real, got {self.ramp}")


@dataclass(frozen=True)
class LinearFraction:
    """k(n) = round(phi * n): a fixed fraction of tokens is key (phi=1 recovers the naive model)."""

    phi: float

    def __post_init__(self) -> None:
        if not (0.0 < self.phi <= 1.0):
            raise ValueError(f"LinearFraction.phi must be in (0, 1], got {self.phi}")


KeyTokenGrowth = Union[Logarithmic, PowerLaw, Bounded, LinearFraction]


def key_count(growth: KeyTokenGrowth, n: int) -> int:
    """Number of key tokens in a sequence of length n, clamped to [0, n].

    Rounding is ceil for Logarithmic/PowerLaw (conservative: more key tokens
    means lower success probability) and half-up rounding for LinearFraction.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(growth, Logarithmic):
        raw = math.ceil(growth.a * math.log(n))
    elif isinstance(growth, PowerLaw):
        raw = math.ceil(growth.c * n ** growth.alpha)
    elif isinstance(growth, Bounded):
        raw = min(growth.k_max, math.ceil(growth.ramp * n))
    elif isinstance(growth, LinearFraction):
        raw = math.floor(growth.phi * n + 0.5)
    else:
        raise TypeError(f"unknown growth law: {growth!r}")
    return max(0, min(raw, n))


# ---------------------------------------------------------------------------
# Non-key error decay laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    """e_non(i) = e0 at every position."""

    e0: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.e0 <= 1.0):
            raise ValueError(f"Constant.e0 must be in [0, 1], got {self.e0}")

    @property
    def max_rate(self) -> float:
        return self.e0

    def rate(self, i: int) -> float:
        return self.e0

    def rates(self, positions: np.ndarray) -> np.ndarray:
        return np.full(len(positions), self.e0)

    def log_survival_sum(self, count: int) -> float:
        """Sum over positions 1..count of log1p(-e_non(i))."""
        if count == 0:
            return 0.0
        return count * math.log1p(-self.e0)


@dataclass(frozen=True)
class PowerDecay:
    """e_non(i) = e0 * (1 + i/tau)**(-beta): decays toward zero as context accumulates."""

    e0: float
    tau: float
    beta: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.e0 <= 1.0):
            raise ValueError(f"PowerDecay.e0 must be in [0, 1], got {self.e0}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"PowerDecay.tau must be a positive real, got {self.tau}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"PowerDecay.beta must be a positive real, got {self.beta}")

    @property
    def max_rate(self) -> float:
        # non-increasing in i, so the first used position dominates
        return self.rate(1)

    def rate(self, i: int) -> float:
        return self.e0 * (1.0 + i / self.tau) ** (-self.beta)

    def rates(self, positions: np.ndarray) -> np.ndarray:
        return self.e0 * (1.0 + positions / self.tau) ** (-self.beta)

    def log_survival_sum(self, count: int) -> float:
        if count == 0:
            return 0.0
        idx = np.arange(1, count + 1, dtype=np.float64)
        return float(np.log1p(-self.rates(idx)).sum())


NonKeyDecay = Union[Constant, PowerDecay]


# ---------------------------------------------------------------------------
# Two-rate model and derived quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoRateModel:
    """Full parameterization: key error rate, non-key decay law, key-count growth law."""

    e_key: float
    non_key: NonKeyDecay
    growth: KeyTokenGrowth

    def __post_init__(self) -> None:
        if not (0.0 <= self.e_key <= 1.0):
            raise ValueError(f"e_key must be in [0, 1], got {self.e_key}")
        if self.e_key < self.non_key.max_rate:
            # assumed (not required) ordering: key junctions are the hard ones
            warnings.warn(
                f"e_key={self.e_key} is below the peak non-key rate "
                f"{self.non_key.max_rate}; computing anyway",
                RateOrderingWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class ReliabilityCurve:
    """Success probability sampled over an increasing grid of sequence lengths."""

    points: tuple[tuple[int, float], ...]
    model_label: str

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError("ReliabilityCurve requires at least one point")
        prev = 0
        for n, p in self.points:
            if n <= prev:
                raise ValueError("curve n values must be strictly increasing")
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"curve probability out of [0, 1] at n={n}: {p}")
            prev = n

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.points)

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(p for _, p in self.points)


class DecayClass(Enum):
    """Asymptotic shape of the success curve induced by each growth law."""

    POWER_LAW_DECAY = "power_law_decay"
    STRETCHED_EXPONENTIAL_DECAY = "stretched_exponential_decay"
    PLATEAU_CONSTANT = "plateau_constant"
    PURE_EXPONENTIAL = "pure_exponential"


def naive_success_probability(e: float, n: int) -> float:
    """(1 - e)**n, the uniform-rate model, evaluated in log space."""
    if not (0.0 <= e <= 1.0):
        raise ValueError(f"e must be in [0, 1], got {e}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if e == 1.0:
        return 0.0
    return math.exp(n * math.log1p(-e))


def sequence_success_probability(model: TwoRateModel, n: int) -> float:
    """Two-rate success probability at length n.

    The key term is (1 - e_key)**k(n); the n - k(n) non-key tokens occupy
    local positions 1..n-k with the decay applied by that local index (the
    product is permutation-invariant for constant decay, and this convention
    makes decaying rates deterministic without fixing a placement).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = key_count(model.growth, n)
    log_p = 0.0
    if k > 0:
        if model.e_key == 1.0:
            return 0.0
        log_p += k * math.log1p(-model.e_key)
    rest = n - k
    if rest > 0:
        if isinstance(model.non_key, Constant) and model.non_key.e0 == 1.0:
            return 0.0
        log_p += model.non_key.log_survival_sum(rest)
    return math.exp(log_p)


def any_disruptive_probability(model: TwoRateModel, n: int) -> float:
    """1 - (1 - e_key)**k(n): chance of at least one key-token error, independent case."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = key_count(model.growth, n)
    if k == 0:
        return 0.0
    if model.e_key == 1.0:
        return 1.0
    return -math.expm1(k * math.log1p(-model.e_key))


def disruptive_union_bound(model: TwoRateModel, n: int) -> float:
    """min(1, k(n) * e_key); always >= any_disruptive_probability."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return min(1.0, key_count(model.growth, n) * model.e_key)


def reliability_curve(model: TwoRateModel, n_values: list[int], label: str = "two_rate") -> ReliabilityCurve:
    """Evaluate sequence_success_probability over a strictly increasing n grid."""
    if not n_values:
        raise ValueError("n_values must be non-empty")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    points = tuple((n, sequence_success_probability(model, n)) for n in n_values)
    return ReliabilityCurve(points=points, model_label=label)


def decay_class(growth: KeyTokenGrowth) -> DecayClass:
    """Map each growth law to the asymptotic shape of its success curve."""
    if isinstance(growth, Logarithmic):
        return DecayClass.POWER_LAW_DECAY
    if isinstance(growth, PowerLaw):
        return DecayClass.STRETCHED_EXPONENTIAL_DECAY
    if isinstance(growth, Bounded):
        return DecayClass.PLATEAU_CONSTANT
    if isinstance(growth, LinearFraction):
        return DecayClass.PURE_EXPONENTIAL
    raise TypeError(f"unknown growth law: {growth!r}")
