"""Batch command-line surface: predict | simulate | ensemble | analyze | fit.

Each run reads a JSON config (flags override file values), writes CSV/JSON
reports plus a rendered PNG figure into --out, and finishes with a
manifest.json echoing the fully resolved semantic config and package
version.  A manifest is itself a valid --config, and replaying one
reproduces every result file byte-for-byte; --out and --threads are
execution-only knobs kept out of the manifest because they never affect
result bytes.  On any error, partial outputs are removed and the process
exits nonzero with a structured message.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__, plots
from .corpus import (
    CorpusFormatError,
    EmptyKeySetError,
    attention_concentration,
    classify_key,
    key_fraction_report,
    long_ppl,
    lsd,
    read_corpus,
    standard_ppl,
)
from .ensemble import (
    EnsembleSpec,
    ErrorDecomposition,
    MajorityVote,
    OracleAnyCorrect,
    SelectionRule,
    ThresholdVote,
    correction_factor,
    correlation_of,
    decomposition_from,
    effective_key_error,
    marginal_key_error,
    selection_failure_probability,
)
from .fitting import (
    FAMILY_NAMES,
    NaiveFamily,
    ObservationSet,
    TwoRateBoundedFamily,
    TwoRateLogFamily,
    TwoRatePowerFamily,
    fit as fit_family,
    predict as fit_predict,
    ranking_key,
    select_model,
)
from .model_core import (
    Bounded,
    Constant,
    KeyTokenGrowth,
    LinearFraction,
    Logarithmic,
    NonKeyDecay,
    PowerDecay,
    PowerLaw,
    TwoRateModel,
    any_disruptive_probability,
    decay_class,
    key_count,
    naive_success_probability,
    sequence_success_probability,
)
from .simulator import (
    Criterion,
    EvenlySpaced,
    Explicit,
    GenerationConfig,
    InterventionPlan,
    Strategy,
    UniformRandom,
    config_with_length,
    error_clustering_stats,
    intervention_experiment,
    simulate_batch,
    simulate_ensemble,
)

THREADS_ENV = "KEYTOKEN_LAB_THREADS"


class ConfigError(ValueError):
    """Config validation failure; message carries the offending field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# Config field helpers
# ---------------------------------------------------------------------------

def _get(cfg: dict, key: str, path: str) -> Any:
    if not isinstance(cfg, dict):
        raise ConfigError(path, "expected an object")
    if key not in cfg:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return cfg[key]


def _num(value: Any, path: str, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    v = float(value)
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v}")
    return v


def _int(value: Any, path: str, lo: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    return value


def _str_choice(value: Any, path: str, choices: Sequence[str]) -> str:
    if value not in choices:
        raise ConfigError(path, f"expected one of {list(choices)}, got {value!r}")
    return value


def parse_growth(cfg: dict, path: str) -> KeyTokenGrowth:
    kind = _str_choice(
        _get(cfg, "kind", path), f"{path}.kind",
        ["logarithmic", "power_law", "bounded", "linear_fraction"],
    )
    try:
        if kind == "logarithmic":
            return Logarithmic(a=_num(_get(cfg, "a", path), f"{path}.a"))
        if kind == "power_law":
            return PowerLaw(
                c=_num(_get(cfg, "c", path), f"{path}.c"),
                alpha=_num(_get(cfg, "alpha", path), f"{path}.alpha"),
            )
        if kind == "bounded":
            return Bounded(
                k_max=_int(_get(cfg, "k_max", path), f"{path}.k_max"),
                ramp=_num(cfg.get("ramp", 1.0), f"{path}.ramp"),
            )
        return LinearFraction(phi=_num(_get(cfg, "phi", path), f"{path}.phi"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def parse_decay(cfg: dict, path: str) -> NonKeyDecay:
    kind = _str_choice(_get(cfg, "kind", path), f"{path}.kind", ["constant", "power_decay"])
    try:
        if kind == "constant":
            return Constant(e0=_num(_get(cfg, "e0", path), f"{path}.e0"))
        return PowerDecay(
            e0=_num(_get(cfg, "e0", path), f"{path}.e0"),
            tau=_num(_get(cfg, "tau", path), f"{path}.tau"),
            beta=_num(_get(cfg, "beta", path), f"{path}.beta"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def parse_model(cfg: dict, path: str) -> TwoRateModel:
    try:
        return TwoRateModel(
            e_key=_num(_get(cfg, "e_key", path), f"{path}.e_key", 0.0, 1.0),
            non_key=parse_decay(_get(cfg, "non_key", path), f"{path}.non_key"),
            growth=parse_growth(_get(cfg, "growth", path), f"{path}.growth"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def parse_generation(cfg: dict, path: str) -> GenerationConfig:
    placement_cfg = cfg.get("key_placement", {"kind": "evenly_spaced"})
    kind = _str_choice(
        _get(placement_cfg, "kind", f"{path}.key_placement"),
        f"{path}.key_placement.kind",
        ["evenly_spaced", "uniform_random", "explicit"],
    )
    if kind == "evenly_spaced":
        placement: Any = EvenlySpaced()
    elif kind == "uniform_random":
        placement = UniformRandom()
    else:
        positions = _get(placement_cfg, "positions", f"{path}.key_placement")
        placement = Explicit(positions=tuple(int(p) for p in positions))
    criterion = _str_choice(
        cfg.get("criterion", "key_tokens_only"),
        f"{path}.criterion",
        ["key_tokens_only", "strict_all_tokens"],
    )
    junction = cfg.get("junction_rates")
    try:
        return GenerationConfig(
            n=_int(_get(cfg, "n", path), f"{path}.n", lo=1),
            model=parse_model(_get(cfg, "model", path), f"{path}.model"),
            key_placement=placement,
            minor_error_rate=_num(cfg.get("minor_error_rate", 0.0), f"{path}.minor_error_rate", 0.0, 1.0),
            persistence=_num(cfg.get("persistence", 0.0), f"{path}.persistence", 0.0, 1.0),
            recovery_enabled=bool(cfg.get("recovery_enabled", True)),
            criterion=Criterion(criterion),
            key_error_rates=tuple(float(r) for r in junction) if junction is not None else None,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def parse_rule(cfg: dict, path: str) -> SelectionRule:
    kind = _str_choice(
        _get(cfg, "kind", path), f"{path}.kind",
        ["majority_vote", "oracle_any_correct", "threshold_vote"],
    )
    try:
        if kind == "majority_vote":
            return MajorityVote(tie_fails=bool(cfg.get("tie_fails", True)))
        if kind == "oracle_any_correct":
            return OracleAnyCorrect()
        return ThresholdVote(
            required_fraction=_num(_get(cfg, "required_fraction", path), f"{path}.required_fraction")
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


# Serializers used to echo the resolved config into the manifest.

def growth_dict(g: KeyTokenGrowth) -> dict:
    if isinstance(g, Logarithmic):
        return {"kind": "logarithmic", "a": g.a}
    if isinstance(g, PowerLaw):
        return {"kind": "power_law", "c": g.c, "alpha": g.alpha}
    if isinstance(g, Bounded):
        return {"kind": "bounded", "k_max": g.k_max, "ramp": g.ramp}
    return {"kind": "linear_fraction", "phi": g.phi}


def decay_dict(d: NonKeyDecay) -> dict:
    if isinstance(d, Constant):
        return {"kind": "constant", "e0": d.e0}
    return {"kind": "power_decay", "e0": d.e0, "tau": d.tau, "beta": d.beta}


def model_dict(m: TwoRateModel) -> dict:
    return {"e_key": m.e_key, "non_key": decay_dict(m.non_key), "growth": growth_dict(m.growth)}


def generation_dict(g: GenerationConfig) -> dict:
    if isinstance(g.key_placement, EvenlySpaced):
        placement: dict = {"kind": "evenly_spaced"}
    elif isinstance(g.key_placement, UniformRandom):
        placement = {"kind": "uniform_random"}
    else:
        placement = {"kind": "explicit", "positions": list(g.key_placement.positions)}
    out = {
        "n": g.n,
        "model": model_dict(g.model),
        "key_placement": placement,
        "minor_error_rate": g.minor_error_rate,
        "persistence": g.persistence,
        "recovery_enabled": g.recovery_enabled,
        "criterion": g.criterion.value,
    }
    if g.key_error_rates is not None:
        out["junction_rates"] = list(g.key_error_rates)
    return out


def rule_dict(r: SelectionRule) -> dict:
    if isinstance(r, MajorityVote):
        return {"kind": "majority_vote", "tie_fails": r.tie_fails}
    if isinstance(r, OracleAnyCorrect):
        return {"kind": "oracle_any_correct"}
    return {"kind": "threshold_vote", "required_fraction": r.required_fraction}


def _rule_label(r: SelectionRule) -> str:
    if isinstance(r, MajorityVote):
        return "majority_vote"
    if isinstance(r, OracleAnyCorrect):
        return "oracle_any_correct"
    return f"threshold_vote_{r.required_fraction:g}"


# ---------------------------------------------------------------------------
# Output bookkeeping
# ---------------------------------------------------------------------------

class OutputTracker:
    """Registers written files so a failing run can remove partial outputs."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def names(self) -> list[str]:
        return [p.name for p in self.paths]

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(tracker: OutputTracker, command: str, resolved: dict) -> None:
    manifest = {
        "command": command,
        "config": resolved,
        "package_version": __version__,
        "outputs": sorted(tracker.names()),
    }
    _write_json(tracker.path("manifest.json"), manifest)


def _n_values(cfg: dict, path: str) -> list[int]:
    if "n_values" in cfg:
        values = cfg["n_values"]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}.n_values", "expected a non-empty list of integers")
        ints = [_int(v, f"{path}.n_values[{i}]", lo=1) for i, v in enumerate(values)]
        if any(b <= a for a, b in zip(ints, ints[1:])):
            raise ConfigError(f"{path}.n_values", "values must be strictly increasing")
        return ints
    if "n_grid" in cfg:
        grid = cfg["n_grid"]
        start = _int(_get(grid, "start", f"{path}.n_grid"), f"{path}.n_grid.start", lo=1)
        stop = _int(_get(grid, "stop", f"{path}.n_grid"), f"{path}.n_grid.stop", lo=start)
        points = _int(grid.get("points", 20), f"{path}.n_grid.points", lo=2)
        spacing = _str_choice(grid.get("spacing", "log"), f"{path}.n_grid.spacing", ["log", "linear"])
        if spacing == "log":
            raw = np.geomspace(start, stop, points)
        else:
            raw = np.linspace(start, stop, points)
        return sorted(set(int(round(v)) for v in raw))
    raise ConfigError(f"{path}.n_values", "missing required field (or n_grid)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_predict(cfg: dict, tracker: OutputTracker, formats: list[str], seed: int, threads: int) -> dict:
    model = parse_model(_get(cfg, "model", "config"), "config.model")
    n_values = _n_values(cfg, "config")
    naive_e = _num(cfg.get("naive_error", model.e_key), "config.naive_error", 0.0, 1.0)

    rows = []
    for n in n_values:
        rows.append([n, naive_success_probability(naive_e, n), sequence_success_probability(model, n)])

    if "csv" in formats:
        _write_csv(tracker.path("predict_curve.csv"), ["n", "p_naive", "p_two_rate"], rows)
    if "json" in formats:
        _write_json(
            tracker.path("predict_report.json"),
            {
                "model": model_dict(model),
                "naive_error": naive_e,
                "decay_class": decay_class(model.growth).value,
                "points": [
                    {
                        "n": n,
                        "k": key_count(model.growth, n),
                        "p_naive": p_naive,
                        "p_two_rate": p_two,
                        "any_disruptive": any_disruptive_probability(model, n),
                        "disruptive_union_bound": min(1.0, key_count(model.growth, n) * model.e_key),
                    }
                    for (n, p_naive, p_two) in rows
                ],
            },
        )
    plots.render_curves(
        tracker.path("predict_curve.png"),
        [r[0] for r in rows],
        {"naive": [r[1] for r in rows], "two_rate": [r[2] for r in rows]},
        f"predicted reliability ({decay_class(model.growth).value})",
    )
    return {
        "model": model_dict(model),
        "naive_error": naive_e,
        "n_values": n_values,
    }


def cmd_simulate(
    cfg: dict, tracker: OutputTracker, formats: list[str], seed: int, trials: int, threads: int
) -> dict:
    mode = _str_choice(_get(cfg, "mode", "config"), "config.mode", ["batch", "clustering", "staircase"])
    generation = parse_generation(_get(cfg, "generation", "config"), "config.generation")
    resolved: dict = {
        "mode": mode,
        "generation": generation_dict(generation),
        "trials": trials,
    }

    if mode == "batch":
        batch = simulate_batch(generation, trials, seed, threads)
        lo, hi = batch.confidence_interval()
        analytic_key_only = 1.0 - any_disruptive_probability(generation.model, generation.n)
        report = {
            "trials": batch.trials,
            "successes": batch.successes,
            "success_rate": batch.success_rate,
            "ci95": [lo, hi],
            "criterion": generation.criterion.value,
            "base_seed": seed,
            "analytic": {
                "two_rate_success": sequence_success_probability(generation.model, generation.n),
                "key_only_success": analytic_key_only,
            },
        }
        if "json" in formats:
            _write_json(tracker.path("simulate_batch.json"), report)
        freq = batch.per_position_error_counts
        if "csv" in formats:
            _write_csv(
                tracker.path("per_position.csv"),
                ["position", "error_count", "error_frequency"],
                [[i + 1, int(c), c / trials] for i, c in enumerate(freq)],
            )
        plots.render_per_position(
            tracker.path("per_position.png"), freq / trials,
            f"per-position error frequency ({trials} trials)",
        )
    elif mode == "clustering":
        stats = error_clustering_stats(generation, trials, seed, threads)
        report = {
            "lag1_autocorrelation": stats.lag1_autocorrelation,
            "mean_error_run_length": stats.mean_error_run_length,
            "independent_baseline_run_length": stats.independent_baseline_run_length,
            "total_errors": stats.total_errors,
            "total_tokens": stats.total_tokens,
            "persistence": generation.persistence,
            "base_seed": seed,
        }
        if "json" in formats:
            _write_json(tracker.path("clustering.json"), report)
        if "csv" in formats:
            _write_csv(
                tracker.path("clustering.csv"),
                ["lag1_autocorrelation", "mean_error_run_length",
                 "independent_baseline_run_length", "total_errors", "total_tokens"],
                [[stats.lag1_autocorrelation, stats.mean_error_run_length,
                  stats.independent_baseline_run_length, stats.total_errors, stats.total_tokens]],
            )
        plots.render_cluster_stats(
            tracker.path("clustering.png"),
            stats.mean_error_run_length,
            stats.independent_baseline_run_length,
            stats.lag1_autocorrelation,
        )
    else:  # staircase
        n_values = _n_values(cfg, "config")
        resolved["n_values"] = n_values
        rows = []
        for j, n in enumerate(n_values):
            cfg_n = config_with_length(generation, n)
            batch = simulate_batch(cfg_n, trials, seed + j * trials, threads)
            lo, hi = batch.confidence_interval()
            rows.append([
                n, trials, batch.successes, batch.success_rate, lo, hi,
                sequence_success_probability(cfg_n.model, n),
                1.0 - any_disruptive_probability(cfg_n.model, n),
            ])
        if "csv" in formats:
            _write_csv(
                tracker.path("staircase.csv"),
                ["n", "trials", "successes", "rate", "ci_low", "ci_high",
                 "p_two_rate", "p_key_only"],
                rows,
            )
        if "json" in formats:
            _write_json(
                tracker.path("staircase.json"),
                {
                    "base_seed": seed,
                    "trials_per_point": trials,
                    "criterion": generation.criterion.value,
                    "points": [
                        {"n": r[0], "successes": r[2], "rate": r[3], "ci95": [r[4], r[5]],
                         "p_two_rate": r[6], "p_key_only": r[7]}
                        for r in rows
                    ],
                },
            )
        analytic_label = (
            "p_key_only" if generation.criterion is Criterion.KEY_TOKENS_ONLY else "p_two_rate"
        )
        analytic_col = 7 if analytic_label == "p_key_only" else 6
        plots.render_curves(
            tracker.path("staircase.png"),
            [r[0] for r in rows],
            {"empirical": [r[3] for r in rows], analytic_label: [r[analytic_col] for r in rows]},
            "empirical staircase vs analytic",
            ci={"empirical": ([r[4] for r in rows], [r[5] for r in rows])},
        )

    if "intervention" in cfg:
        icfg = cfg["intervention"]
        plan = InterventionPlan(
            budget=_int(_get(icfg, "budget", "config.intervention"), "config.intervention.budget", lo=0),
            reduction=_num(_get(icfg, "reduction", "config.intervention"), "config.intervention.reduction", 0.0),
            strategy=Strategy(
                _str_choice(
                    icfg.get("strategy", "greedy_by_error_rate"),
                    "config.intervention.strategy",
                    [s.value for s in Strategy],
                )
            ),
            junction_rates=tuple(float(r) for r in _get(icfg, "junction_rates", "config.intervention")),
        )
        outcomes = intervention_experiment(generation, plan, trials, seed, threads)
        rows = []
        for strategy in Strategy:
            oc = outcomes[strategy]
            lo, hi = oc.batch.confidence_interval()
            rows.append([
                strategy.value,
                "" if oc.chosen is None else ";".join(str(j) for j in oc.chosen),
                oc.batch.successes, oc.batch.success_rate, lo, hi,
            ])
        if "csv" in formats:
            _write_csv(
                tracker.path("intervention.csv"),
                ["strategy", "chosen_junctions", "successes", "rate", "ci_low", "ci_high"],
                rows,
            )
        resolved["intervention"] = {
            "budget": plan.budget,
            "reduction": plan.reduction,
            "strategy": plan.strategy.value,
            "junction_rates": list(plan.junction_rates),
        }

    return resolved


def cmd_ensemble(
    cfg: dict, tracker: OutputTracker, formats: list[str], seed: int, trials: int, threads: int
) -> dict:
    if "s" in cfg and "q" in cfg:
        base = ErrorDecomposition(s=_num(cfg["s"], "config.s", 0.0, 1.0), q=_num(cfg["q"], "config.q", 0.0, 1.0))
    elif "e_key" in cfg and "rho" in cfg:
        base = decomposition_from(
            _num(cfg["e_key"], "config.e_key"), _num(cfg["rho"], "config.rho", 0.0, 1.0)
        )
    else:
        raise ConfigError("config", "provide either (s, q) or (e_key, rho)")
    e_key = marginal_key_error(base)

    m_values = [
        _int(m, f"config.m_values[{i}]", lo=1)
        for i, m in enumerate(cfg.get("m_values", [1, 3, 5]))
    ]
    rules = [parse_rule(r, f"config.rules[{i}]") for i, r in enumerate(cfg.get("rules", [{"kind": "majority_vote"}]))]
    rho_values = [
        _num(r, f"config.rho_values[{i}]", 0.0, 1.0)
        for i, r in enumerate(cfg.get("rho_values", [0.0, 0.5, 0.999]))
    ]

    analytic_rows = []
    factors_by_m: dict[int, list[float]] = {m: [] for m in m_values}
    for rho in rho_values:
        d = decomposition_from(e_key, rho) if 0.0 < e_key < 1.0 else base
        for rule in rules:
            for m in m_values:
                spec = EnsembleSpec(m=m, decomposition=d, rule=rule)
                e_eff = effective_key_error(spec)
                f = correction_factor(spec) if e_key > 0 else math.nan
                analytic_rows.append([_rule_label(rule), m, rho, d.s, d.q, e_key, e_eff, f])
                if rule is rules[0]:
                    factors_by_m[m].append(f)
    if "csv" in formats:
        _write_csv(
            tracker.path("ensemble_analytic.csv"),
            ["rule", "m", "rho", "s", "q", "e_key", "e_eff", "correction_factor"],
            analytic_rows,
        )
    if "json" in formats:
        _write_json(
            tracker.path("ensemble_report.json"),
            {
                "decomposition": {"s": base.s, "q": base.q},
                "e_key": e_key,
                "rho": correlation_of(base) if 0.0 < e_key < 1.0 else None,
                "rows": [
                    {"rule": r[0], "m": r[1], "rho": r[2], "s": r[3], "q": r[4],
                     "e_key": r[5], "e_eff": r[6], "correction_factor": r[7]}
                    for r in analytic_rows
                ],
            },
        )
    plots.render_correction_factors(
        tracker.path("ensemble_factors.png"), rho_values,
        {m: factors_by_m[m] for m in m_values}, _rule_label(rules[0]),
    )

    resolved: dict = {
        "s": base.s,
        "q": base.q,
        "m_values": m_values,
        "rules": [rule_dict(r) for r in rules],
        "rho_values": rho_values,
        "trials": trials,
    }

    if "sequence" in cfg:
        generation = parse_generation(_get(cfg["sequence"], "generation", "config.sequence"), "config.sequence.generation")
        resolved["sequence"] = {"generation": generation_dict(generation)}
        k = generation.key_count
        sim_rows = []
        for rule in rules:
            for m in m_values:
                spec = EnsembleSpec(m=m, decomposition=base, rule=rule)
                batch = simulate_ensemble(generation, spec, trials, seed, threads)
                lo, hi = batch.confidence_interval()
                analytic: Optional[float] = None
                if generation.criterion is Criterion.KEY_TOKENS_ONLY:
                    # sequence-level reduction: shared events collapse over the k junctions
                    q_seq = 1.0 - (1.0 - base.q) ** k
                    seq_spec = EnsembleSpec(
                        m=m, decomposition=ErrorDecomposition(s=0.0, q=q_seq), rule=rule
                    )
                    analytic = (1.0 - base.s) ** k * (1.0 - selection_failure_probability(seq_spec))
                sim_rows.append([
                    _rule_label(rule), m, trials, batch.successes, batch.success_rate,
                    lo, hi, "" if analytic is None else analytic,
                ])
        if "csv" in formats:
            _write_csv(
                tracker.path("ensemble_sim.csv"),
                ["rule", "m", "trials", "successes", "rate", "ci_low", "ci_high", "analytic_rate"],
                sim_rows,
            )

    return resolved


def cmd_analyze(cfg: dict, tracker: OutputTracker, formats: list[str], seed: int, threads: int) -> dict:
    input_path = Path(str(_get(cfg, "input", "config"))).resolve()
    threshold = _num(cfg.get("threshold", 2.0), "config.threshold")
    meta, records = read_corpus(input_path)
    if not records:
        raise ConfigError("config.input", "corpus contains no token records")

    report = classify_key(records, threshold)
    comparison = key_fraction_report(report)
    key_set = report.key_set()
    std_ppl = standard_ppl(records)
    try:
        lppl: Optional[float] = long_ppl(records, key_set)
    except EmptyKeySetError:
        lppl = None

    attention: Optional[dict] = None
    masses = [r.attention_mass for r in records if r.attention_mass is not None]
    if masses:
        top_k = _int(cfg.get("attention_top_k", max(1, len(masses) // 10)), "config.attention_top_k", lo=1)
        attention = {
            "top_k": top_k,
            "positions_with_mass": len(masses),
            "concentration": attention_concentration(masses, top_k),
        }

    if "csv" in formats:
        _write_csv(
            tracker.path("tokens.csv"),
            ["doc_id", "index", "lsd", "is_key"],
            [[r.doc_id, r.index, lsd(r), int(lsd(r) > threshold)] for r in records],
        )
    if "json" in formats:
        _write_json(
            tracker.path("analyze_report.json"),
            {
                "input": str(input_path),
                "meta": {"log_base": meta.log_base, "short_context_len": meta.short_context_len},
                "threshold": threshold,
                "total_tokens": report.total_tokens,
                "key_tokens": report.key_tokens,
                "key_fraction": report.key_fraction,
                "reference_key_fraction": comparison.reference,
                "deviation": comparison.deviation,
                "per_doc_fraction": dict(sorted(report.per_doc_fraction.items())),
                "standard_ppl": std_ppl,
                "long_ppl": lppl,
                "attention": attention,
            },
        )
    plots.render_lsd_histogram(tracker.path("lsd_histogram.png"), [lsd(r) for r in records], threshold)
    return {"input": str(input_path), "threshold": threshold}


def cmd_fit(cfg: dict, tracker: OutputTracker, formats: list[str], seed: int, threads: int) -> dict:
    input_path = Path(str(_get(cfg, "input", "config"))).resolve()
    obs = ObservationSet.from_csv(input_path)
    family_by_name = {name: cls for cls, name in FAMILY_NAMES.items()}
    names = cfg.get("families")
    if names is None:
        results = select_model(obs)
    else:
        classes = []
        for i, name in enumerate(names):
            if name not in family_by_name:
                raise ConfigError(f"config.families[{i}]", f"unknown family {name!r}")
            classes.append(family_by_name[name])
        results = sorted((fit_family(cls, obs) for cls in classes), key=ranking_key)

    if "json" in formats:
        _write_json(
            tracker.path("fit_results.json"),
            [
                {
                    "rank": i + 1,
                    "family": r.family_name,
                    "params": r.family.params,
                    "log_likelihood": r.log_likelihood,
                    "aic": r.aic,
                    "converged": r.converged,
                }
                for i, r in enumerate(results)
            ],
        )
    ns = [row[0] for row in obs.rows]
    rates = [row[2] / row[1] for row in obs.rows]
    curve_rows = []
    for n, rate in zip(ns, rates):
        row: list[Any] = [n, rate]
        for r in results:
            row.append(fit_predict(r, n) if r.converged else "")
        curve_rows.append(row)
    if "csv" in formats:
        _write_csv(
            tracker.path("fit_curves.csv"),
            ["n", "observed_rate"] + [r.family_name for r in results],
            curve_rows,
        )
    plots.render_fit_overlay(
        tracker.path("fit_overlay.png"),
        ns,
        rates,
        {
            r.family_name: (ns, [fit_predict(r, n) for n in ns])
            for r in results
            if r.converged
        },
        results[0].family_name,
    )
    return {"input": str(input_path), "families": [r.family_name for r in results]}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON in {path}: {exc.msg} (line {exc.lineno})")
    if not isinstance(cfg, dict):
        raise ConfigError("--config", "top level must be a JSON object")
    if "command" in cfg and "config" in cfg:  # replaying a manifest
        if cfg["command"] != command:
            raise ConfigError(
                "--config", f"manifest is for command {cfg['command']!r}, not {command!r}"
            )
        cfg = cfg["config"]
        if not isinstance(cfg, dict):
            raise ConfigError("--config", "manifest config must be a JSON object")
    return cfg


def _resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected an integer, got {env!r}")
        if value < 0:
            raise ConfigError(THREADS_ENV, f"must be >= 0, got {value}")
        return value
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keytoken-lab",
        description="Two-rate key-token reliability: predict, simulate, ensemble, analyze, fit.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("predict", "closed-form reliability curves (naive vs two-rate)"),
        ("simulate", "Monte Carlo batches, clustering stats, staircase curves, interventions"),
        ("ensemble", "analytic and simulated multi-sample selection"),
        ("analyze", "key-token metrics over a token-logprob JSONL corpus"),
        ("fit", "maximum-likelihood regime fitting and AIC selection"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file (or a manifest to replay)")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument(
            "--format", action="append", choices=["csv", "json"], default=None,
            help="output formats; repeatable (default: both)",
        )
        p.add_argument("--trials", type=int, default=None, help="trial count (overrides config)")
        p.add_argument(
            "--threads", type=int, default=None,
            help=f"worker threads, 0 = auto; result-invariant (env {THREADS_ENV})",
        )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.out)
    tracker = OutputTracker(out_dir)
    try:
        cfg = _load_config(args.config, args.command)
        formats = sorted(set(args.format)) if args.format else ["csv", "json"]
        seed = args.seed if args.seed is not None else _int(cfg.get("seed", 0), "config.seed", lo=0)
        trials = args.trials if args.trials is not None else cfg.get("trials", 10000)
        trials = _int(trials, "config.trials", lo=1)
        threads = _resolve_threads(args.threads)
        out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "predict":
            resolved = cmd_predict(cfg, tracker, formats, seed, threads)
        elif args.command == "simulate":
            resolved = cmd_simulate(cfg, tracker, formats, seed, trials, threads)
            resolved["trials"] = trials
        elif args.command == "ensemble":
            resolved = cmd_ensemble(cfg, tracker, formats, seed, trials, threads)
            resolved["trials"] = trials
        elif args.command == "analyze":
            resolved = cmd_analyze(cfg, tracker, formats, seed, threads)
        else:
            resolved = cmd_fit(cfg, tracker, formats, seed, threads)

        resolved["seed"] = seed
        resolved["formats"] = formats
        _write_manifest(tracker, args.command, resolved)
        for name in sorted(tracker.names()):
            print(f"wrote {out_dir / name}")
        return 0
    except ConfigError as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusFormatError, ValueError, OSError) as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
