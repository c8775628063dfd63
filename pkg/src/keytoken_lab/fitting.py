"""Maximum-likelihood estimation and AIC selection among reliability regimes.

Success-vs-length observations (n, trials, successes) are fit against four
families: a uniform-rate exponential and three two-rate variants whose key
count grows logarithmically, as a fractional power, or saturates at k_max.
All two-rate families fix the non-key rate at zero: with success-only
observations, e_non and k(n) are jointly unidentifiable, and the regime
question lives entirely in the key-token term.

Estimation is a coarse log-spaced grid (20 points per dimension) followed by
deterministic coordinate descent, per-coordinate pattern search, to relative
parameter tolerance 1e-4 or 200 sweeps.  k_max is searched over integers.
Selection ranks by AIC = 2*params - 2*loglik, ties broken by fewer
parameters, then by family name.

The a and c boxes start above the degenerate region where ceil(a*ln n) or
ceil(c*n^alpha) is constant over any realistic length range; such constants
duplicate the bounded family and make the ranking arbitrary (the same
identifiability concern behind the open alpha box).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

__all__ = [
    "ObservationSet",
    "NaiveFamily",
    "TwoRateLogFamily",
    "TwoRatePowerFamily",
    "TwoRateBoundedFamily",
    "ModelFamily",
    "FitResult",
    "DegenerateDataError",
    "UnconvergedFitError",
    "FAMILY_NAMES",
    "log_likelihood",
    "fit",
    "select_model",
    "ranking_key",
    "predict",
]

_E_BOX = (1e-6, 0.999)
_A_BOX = (0.5, 200.0)
_C_BOX = (0.1, 200.0)
_ALPHA_BOX = (0.05, 0.95)
_KMAX_BOX = (1, 10**6)
_P_CLAMP = 1e-12
_GRID_POINTS = 20
_PARAM_TOL = 1e-4
_MAX_SWEEPS = 200


class DegenerateDataError(ValueError):
    """All-success or all-failure data pins every family to a boundary."""


class UnconvergedFitError(ValueError):
    """predict() refuses a fit whose optimizer hit the iteration cap."""


@dataclass(frozen=True)
class ObservationSet:
    """Rows of (n, trials, successes) with distinct n."""

    rows: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("ObservationSet requires at least one row")
        seen = set()
        for n, t, s in self.rows:
            if n < 1:
                raise ValueError(f"n must be >= 1, got {n}")
            if t < 1:
                raise ValueError(f"trials must be >= 1, got {t}")
            if not (0 <= s <= t):
                raise ValueError(f"successes must be in [0, trials], got {s}/{t}")
            if n in seen:
                raise ValueError(f"duplicate n value: {n}")
            seen.add(n)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ObservationSet":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "n", "trials", "successes",
            ]:
                raise ValueError(
                    f"{path}: expected CSV header 'n,trials,successes', got {reader.fieldnames}"
                )
            rows = [(int(r["n"]), int(r["trials"]), int(r["successes"])) for r in reader]
        return cls(rows=tuple(rows))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.array([r[0] for r in self.rows], dtype=np.int64)
        t = np.array([r[1] for r in self.rows], dtype=np.float64)
        s = np.array([r[2] for r in self.rows], dtype=np.float64)
        return n, t, s


# ---------------------------------------------------------------------------
# Model families (e_non fixed at 0)
# ---------------------------------------------------------------------------

def _check_box(name: str, value: float, lo: float, hi: float, open_interval: bool = False) -> None:
    ok = lo < value < hi if open_interval else lo <= value <= hi
    if not ok:
        bracket = "()" if open_interval else "[]"
        raise ValueError(
            f"{name}={value} outside {bracket[0]}{lo}, {hi}{bracket[1]}"
        )


@dataclass(frozen=True)
class NaiveFamily:
    """p(n) = (1 - e)**n."""

    e: float

    def __post_init__(self) -> None:
        _check_box("e", self.e, *_E_BOX)

    def key_counts(self, n: np.ndarray) -> np.ndarray:
        return n.astype(np.int64)

    @property
    def error_rate(self) -> float:
        return self.e

    @property
    def params(self) -> dict[str, float]:
        return {"e": self.e}


@dataclass(frozen=True)
class TwoRateLogFamily:
    """p(n) = (1 - e_key)**ceil(a * ln n)."""

    e_key: float
    a: float

    def __post_init__(self) -> None:
        _check_box("e_key", self.e_key, *_E_BOX)
        _check_box("a", self.a, *_A_BOX)

    def key_counts(self, n: np.ndarray) -> np.ndarray:
        k = np.ceil(self.a * np.log(n)).astype(np.int64)
        return np.clip(k, 0, n)

    @property
    def error_rate(self) -> float:
        return self.e_key

    @property
    def params(self) -> dict[str, float]:
        return {"e_key": self.e_key, "a": self.a}


@dataclass(frozen=True)
class TwoRatePowerFamily:
    """p(n) = (1 - e_key)**ceil(c * n**alpha)."""

    e_key: float
    c: float
    alpha: float

    def __post_init__(self) -> None:
        _check_box("e_key", self.e_key, *_E_BOX)
        _check_box("c", self.c, *_C_BOX)
        _check_box("alpha", self.alpha, *_ALPHA_BOX, open_interval=True)

    def key_counts(self, n: np.ndarray) -> np.ndarray:
        k = np.ceil(self.c * n.astype(np.float64) ** self.alpha).astype(np.int64)
        return np.clip(k, 0, n)

    @property
    def error_rate(self) -> float:
        return self.e_key

    @property
    def params(self) -> dict[str, float]:
        return {"e_key": self.e_key, "c": self.c, "alpha": self.alpha}


@dataclass(frozen=True)
class TwoRateBoundedFamily:
    """p(n) = (1 - e_key)**min(k_max, n)."""

    e_key: float
    k_max: int

    def __post_init__(self) -> None:
        _check_box("e_key", self.e_key, *_E_BOX)
        if not (_KMAX_BOX[0] <= self.k_max <= _KMAX_BOX[1]):
            raise ValueError(f"k_max={self.k_max} outside [{_KMAX_BOX[0]}, {_KMAX_BOX[1]}]")

    def key_counts(self, n: np.ndarray) -> np.ndarray:
        return np.minimum(np.int64(self.k_max), n)

    @property
    def error_rate(self) -> float:
        return self.e_key

    @property
    def params(self) -> dict[str, float]:
        return {"e_key": self.e_key, "k_max": self.k_max}


ModelFamily = Union[NaiveFamily, TwoRateLogFamily, TwoRatePowerFamily, TwoRateBoundedFamily]

FAMILY_NAMES: dict[type, str] = {
    NaiveFamily: "naive",
    TwoRateLogFamily: "two_rate_log",
    TwoRatePowerFamily: "two_rate_power",
    TwoRateBoundedFamily: "two_rate_bounded",
}


def family_name(family: ModelFamily) -> str:
    return FAMILY_NAMES[type(family)]


def _success_probs(family: ModelFamily, n: np.ndarray) -> np.ndarray:
    k = family.key_counts(n)
    return np.exp(k * math.log1p(-family.error_rate))


def log_likelihood(family: ModelFamily, obs: ObservationSet) -> float:
    """Binomial log-likelihood with p clamped to [1e-12, 1 - 1e-12]."""
    n, t, s = obs.arrays()
    p = np.clip(_success_probs(family, n), _P_CLAMP, 1.0 - _P_CLAMP)
    return float(np.sum(s * np.log(p) + (t - s) * np.log1p(-p)))


@dataclass(frozen=True)
class FitResult:
    family: ModelFamily
    log_likelihood: float
    aic: float
    converged: bool

    @property
    def n_params(self) -> int:
        return len(self.family.params)

    @property
    def family_name(self) -> str:
        return family_name(self.family)


# ---------------------------------------------------------------------------
# Grid + coordinate-descent optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Coord:
    name: str
    lo: float
    hi: float
    scale: str  # "log", "linear", or "int"


_FAMILY_COORDS: dict[type, tuple[_Coord, ...]] = {
    NaiveFamily: (_Coord("e", *_E_BOX, "log"),),
    TwoRateLogFamily: (
        _Coord("e_key", *_E_BOX, "log"),
        _Coord("a", *_A_BOX, "log"),
    ),
    TwoRatePowerFamily: (
        _Coord("e_key", *_E_BOX, "log"),
        _Coord("c", *_C_BOX, "log"),
        _Coord("alpha", _ALPHA_BOX[0] + 1e-6, _ALPHA_BOX[1] - 1e-6, "linear"),
    ),
    TwoRateBoundedFamily: (
        _Coord("e_key", *_E_BOX, "log"),
        _Coord("k_max", *_KMAX_BOX, "int"),
    ),
}


def _coord_grid(coord: _Coord) -> np.ndarray:
    if coord.scale == "log":
        return np.geomspace(coord.lo, coord.hi, _GRID_POINTS)
    if coord.scale == "linear":
        return np.linspace(coord.lo, coord.hi, _GRID_POINTS)
    values = np.unique(np.rint(np.geomspace(coord.lo, coord.hi, _GRID_POINTS)).astype(np.int64))
    return values.astype(np.float64)


def _make_family(cls: type, values: list[float]) -> ModelFamily:
    coords = _FAMILY_COORDS[cls]
    kwargs = {}
    for coord, v in zip(coords, values):
        kwargs[coord.name] = int(round(v)) if coord.scale == "int" else float(v)
    return cls(**kwargs)


def _ll_of(cls: type, values: list[float], obs: ObservationSet) -> float:
    return log_likelihood(_make_family(cls, values), obs)


def _grid_search(cls: type, obs: ObservationSet) -> list[float]:
    coords = _FAMILY_COORDS[cls]
    grids = [_coord_grid(c) for c in coords]
    mesh = np.meshgrid(*grids, indexing="ij")
    flat = [m.ravel() for m in mesh]
    n, t, s = obs.arrays()
    n_f = n.astype(np.float64)

    # vectorized k over the whole grid: shape (G, R)
    if cls is NaiveFamily:
        k = np.broadcast_to(n_f, (flat[0].size, n.size))
    elif cls is TwoRateLogFamily:
        k = np.ceil(flat[1][:, None] * np.log(n_f)[None, :])
    elif cls is TwoRatePowerFamily:
        k = np.ceil(flat[1][:, None] * n_f[None, :] ** flat[2][:, None])
    elif cls is TwoRateBoundedFamily:
        k = np.minimum(flat[1][:, None], n_f[None, :])
    else:
        raise TypeError(f"unknown family class: {cls}")
    k = np.clip(k, 0.0, n_f[None, :])

    log1me = np.log1p(-flat[0])[:, None]
    p = np.clip(np.exp(k * log1me), _P_CLAMP, 1.0 - _P_CLAMP)
    ll = (s[None, :] * np.log(p) + (t - s)[None, :] * np.log1p(-p)).sum(axis=1)
    best = int(np.argmax(ll))
    return [float(f[best]) for f in flat]


def _refine_log(value: float, lo: float, hi: float, f: Callable[[float], float]) -> float:
    best_v, best_ll = value, f(value)
    factor = 2.0
    while factor > 1.0 + 1e-7:
        moved = False
        for cand in (min(best_v * factor, hi), max(best_v / factor, lo)):
            ll = f(cand)
            if ll > best_ll:
                best_v, best_ll = cand, ll
                moved = True
        if not moved:
            factor = math.sqrt(factor)
    return best_v


def _refine_linear(value: float, lo: float, hi: float, f: Callable[[float], float]) -> float:
    best_v, best_ll = value, f(value)
    step = (hi - lo) / 4.0
    while step > (hi - lo) * 1e-8:
        moved = False
        for cand in (min(best_v + step, hi), max(best_v - step, lo)):
            ll = f(cand)
            if ll > best_ll:
                best_v, best_ll = cand, ll
                moved = True
        if not moved:
            step *= 0.5
    return best_v


def _refine_int(value: float, lo: float, hi: float, f: Callable[[float], float]) -> float:
    best_v = int(round(value))
    best_ll = f(float(best_v))
    step = max(1, best_v // 2)
    while step >= 1:
        moved = False
        for cand in (min(best_v + step, int(hi)), max(best_v - step, int(lo))):
            if cand == best_v:
                continue
            ll = f(float(cand))
            if ll > best_ll:
                best_v, best_ll = cand, ll
                moved = True
        if not moved:
            step //= 2
    return float(best_v)


def fit(family_cls: type, obs: ObservationSet) -> FitResult:
    """Maximize the binomial likelihood for one family; deterministic."""
    if family_cls not in _FAMILY_COORDS:
        raise TypeError(f"unknown family class: {family_cls}")
    if len(obs.rows) < 3:
        raise ValueError(f"fitting requires at least 3 rows, got {len(obs.rows)}")
    _, t, s = obs.arrays()
    if np.all(s == 0) or np.all(s == t):
        raise DegenerateDataError(
            "every row is all-failure or all-success; rates are pinned to a boundary"
        )

    coords = _FAMILY_COORDS[family_cls]
    values = _grid_search(family_cls, obs)

    converged = False
    for _ in range(_MAX_SWEEPS):
        previous = list(values)
        for i, coord in enumerate(coords):
            def ll_at(v: float, i: int = i) -> float:
                trial = list(values)
                trial[i] = v
                return _ll_of(family_cls, trial, obs)

            if coord.scale == "log":
                values[i] = _refine_log(values[i], coord.lo, coord.hi, ll_at)
            elif coord.scale == "linear":
                values[i] = _refine_linear(values[i], coord.lo, coord.hi, ll_at)
            else:
                values[i] = _refine_int(values[i], coord.lo, coord.hi, ll_at)
        rel_change = max(
            abs(v - p) / max(abs(p), 1e-12) for v, p in zip(values, previous)
        )
        if rel_change < _PARAM_TOL:
            converged = True
            break

    fitted = _make_family(family_cls, values)
    ll = log_likelihood(fitted, obs)
    aic = 2.0 * len(fitted.params) - 2.0 * ll
    return FitResult(family=fitted, log_likelihood=ll, aic=aic, converged=converged)


def ranking_key(result: FitResult) -> tuple[float, int, str]:
    """Selection order: ascending AIC, ties to fewer parameters, then family name."""
    return (result.aic, result.n_params, result.family_name)


def select_model(obs: ObservationSet) -> list[FitResult]:
    """Fit all four families and rank by ascending AIC (ties: fewer params, then name)."""
    results: list[FitResult] = []
    errors: list[Exception] = []
    for cls in (NaiveFamily, TwoRateLogFamily, TwoRatePowerFamily, TwoRateBoundedFamily):
        try:
            results.append(fit(cls, obs))
        except (DegenerateDataError, ValueError) as exc:
            errors.append(exc)
            warnings.warn(f"{FAMILY_NAMES[cls]} fit failed: {exc}", stacklevel=2)
    if not results:
        raise errors[0]
    return sorted(results, key=ranking_key)


def predict(result: FitResult, n: int) -> float:
    """Success probability at length n under the fitted parameters."""
    if not result.converged:
        raise UnconvergedFitError("fit did not converge; refusing to extrapolate")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return float(_success_probs(result.family, np.array([n], dtype=np.int64))[0])
