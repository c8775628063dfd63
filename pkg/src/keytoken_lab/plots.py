"""Figure rendering for CLI reports.

Each command writes a PNG next to its delimited output.  Figures are
byte-reproducible: the Agg backend is forced and the PNG Software tag is
stripped, so replaying a manifest reproduces identical image files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "render_curves",
    "render_per_position",
    "render_cluster_stats",
    "render_correction_factors",
    "render_lsd_histogram",
    "render_fit_overlay",
]

_SAVE_KWARGS = {"dpi": 130, "metadata": {"Software": None}}


def _finish(fig, path: Path) -> None:
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_curves(
    path: Path,
    lengths: Sequence[int],
    series: dict[str, Sequence[float]],
    title: str,
    ci: Optional[dict[str, tuple[Sequence[float], Sequence[float]]]] = None,
) -> None:
    """Success-probability curves over sequence length, log-x and log-y."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    for label, values in series.items():
        ax.plot(lengths, values, marker="o", markersize=3, label=label)
        if ci and label in ci:
            lo, hi = ci[label]
            ax.fill_between(lengths, lo, hi, alpha=0.2)
    ax.set_xscale("log")
    floor = min((v for vals in series.values() for v in vals if v > 0), default=1e-6)
    ax.set_yscale("log")
    ax.set_ylim(max(floor * 0.5, 1e-16), 1.2)
    ax.set_xlabel("sequence length n")
    ax.set_ylabel("success probability")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)


def render_per_position(path: Path, rates: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.6), constrained_layout=True)
    ax.plot(np.arange(1, rates.size + 1), rates, lw=0.8)
    ax.set_xlabel("token position")
    ax.set_ylabel("error frequency")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def render_cluster_stats(path: Path, observed: float, baseline: float, lag1: float) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.6), constrained_layout=True)
    ax.bar(["observed run", "independent baseline"], [observed, baseline], color=["C0", "C1"])
    ax.set_ylabel("mean error run length")
    ax.set_title(f"error clustering (lag-1 autocorr = {lag1:.3f})")
    ax.grid(True, axis="y", alpha=0.3)
    _finish(fig, path)


def render_correction_factors(
    path: Path, rhos: Sequence[float], factors_by_m: dict[int, Sequence[float]], rule_label: str
) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    for m, factors in sorted(factors_by_m.items()):
        ax.plot(rhos, factors, marker="o", markersize=3, label=f"m={m}")
    ax.set_xlabel("failure correlation rho")
    ax.set_ylabel("correction factor f = e_eff / e_key")
    ax.set_title(f"ensemble correction factor ({rule_label})")
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)


def render_lsd_histogram(path: Path, lsd_values: Sequence[float], threshold: float) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    ax.hist(lsd_values, bins=40, color="C0", alpha=0.85)
    ax.axvline(threshold, color="C3", ls="--", label=f"key threshold {threshold:g}")
    ax.set_xlabel("long-short difference (nats)")
    ax.set_ylabel("token count")
    ax.set_title("LSD distribution")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def render_fit_overlay(
    path: Path,
    obs_n: Sequence[int],
    obs_rate: Sequence[float],
    curves: dict[str, tuple[Sequence[int], Sequence[float]]],
    best_label: str,
) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    ax.scatter(obs_n, obs_rate, s=14, color="k", zorder=3, label="observed")
    for label, (ns, ps) in curves.items():
        lw = 2.0 if label == best_label else 1.0
        ax.plot(ns, ps, lw=lw, label=f"{label}{' (best)' if label == best_label else ''}")
    ax.set_xscale("log")
    ax.set_xlabel("sequence length n")
    ax.set_ylabel("success rate")
    ax.set_title("observed success vs fitted families")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)
