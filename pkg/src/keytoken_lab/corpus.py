"""Key-token metrics over externally produced per-token log-probability records.

A token's long-short difference (LSD) is the natural-log probability gain it
receives from long context over a truncated one; tokens with LSD strictly
above a threshold (2.0 nats by default) are classified as key.  LongPPL is
perplexity restricted to the key set.  Log-probabilities are natural-log
throughout; the input file declares this in its metadata line and anything
else is rejected.

Input format (JSON Lines): a required leading metadata line

    {"meta": {"log_base": "e", "short_context_len": 512}}

followed by one object per token:

    {"doc_id": "d1", "index": 0, "token": "x", "logprob_long": -0.5,
     "logprob_short": -3.0, "attention_mass": 0.7}

token and attention_mass are optional.  A malformed line fails the whole run
with its line number; metric integrity beats partial results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "TokenRecord",
    "CorpusMeta",
    "KeyTokenReport",
    "PerplexityReport",
    "KeyFractionComparison",
    "CorpusFormatError",
    "EmptyKeySetError",
    "REFERENCE_KEY_FRACTION",
    "lsd",
    "classify_key",
    "long_ppl",
    "standard_ppl",
    "attention_concentration",
    "key_fraction_report",
    "read_corpus",
    "write_corpus",
]

REFERENCE_KEY_FRACTION = 0.09


class CorpusFormatError(ValueError):
    """A corpus file violated the JSONL schema; message carries the line number."""

    def __init__(self, line_number: int, message: str) -> None:
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class EmptyKeySetError(ValueError):
    """LongPPL is undefined over an empty key set."""


@dataclass(frozen=True)
class TokenRecord:
    """One corpus token with long- and short-context natural-log probabilities."""

    doc_id: str
    index: int
    logprob_long: float
    logprob_short: float
    token: Optional[str] = None
    attention_mass: Optional[float] = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"index must be >= 0, got {self.index}")
        for name, value in (("logprob_long", self.logprob_long), ("logprob_short", self.logprob_short)):
            if not math.isfinite(value) or value > 0.0:
                raise ValueError(f"{name} must be finite and <= 0, got {value}")
        if self.attention_mass is not None and not (
            math.isfinite(self.attention_mass) and self.attention_mass >= 0.0
        ):
            raise ValueError(f"attention_mass must be >= 0, got {self.attention_mass}")


@dataclass(frozen=True)
class CorpusMeta:
    log_base: str
    short_context_len: Optional[int] = None

    def __post_init__(self) -> None:
        if self.log_base != "e":
            raise ValueError(f'log_base must be "e" (natural log), got {self.log_base!r}')


@dataclass(frozen=True)
class KeyTokenReport:
    """Key classification at a threshold: indices per doc plus fraction aggregates."""

    threshold: float
    key_indices: dict[str, tuple[int, ...]]
    per_doc_fraction: dict[str, float]
    key_fraction: float
    total_tokens: int
    key_tokens: int

    def key_set(self) -> set[tuple[str, int]]:
        return {(doc, i) for doc, idxs in self.key_indices.items() for i in idxs}


@dataclass(frozen=True)
class PerplexityReport:
    standard_ppl: float
    long_ppl: float
    total_tokens: int
    key_tokens: int


@dataclass(frozen=True)
class KeyFractionComparison:
    """Observed key fraction next to the published reference; no pass/fail judgment."""

    key_fraction: float
    reference: float
    deviation: float


def lsd(record: TokenRecord) -> float:
    """Long-short difference in nats: logprob_long - logprob_short."""
    return record.logprob_long - record.logprob_short


def classify_key(records: list[TokenRecord], threshold: float = 2.0) -> KeyTokenReport:
    """Mark tokens with lsd strictly above threshold as key; aggregate per doc and corpus-wide."""
    if not records:
        raise ValueError("classify_key requires at least one record")
    key_indices: dict[str, list[int]] = {}
    doc_totals: dict[str, int] = {}
    for rec in records:
        doc_totals[rec.doc_id] = doc_totals.get(rec.doc_id, 0) + 1
        if lsd(rec) > threshold:
            key_indices.setdefault(rec.doc_id, []).append(rec.index)
    per_doc = {
        doc: len(key_indices.get(doc, [])) / total for doc, total in doc_totals.items()
    }
    key_total = sum(len(v) for v in key_indices.values())
    return KeyTokenReport(
        threshold=threshold,
        key_indices={doc: tuple(v) for doc, v in key_indices.items()},
        per_doc_fraction=per_doc,
        key_fraction=key_total / len(records),
        total_tokens=len(records),
        key_tokens=key_total,
    )


def long_ppl(records: list[TokenRecord], key_set: set[tuple[str, int]]) -> float:
    """exp of the mean negative long-context log-probability over the key set."""
    if not key_set:
        raise EmptyKeySetError("key set is empty")
    logprobs = [r.logprob_long for r in records if (r.doc_id, r.index) in key_set]
    if not logprobs:
        raise EmptyKeySetError("no records matched the key set")
    return math.exp(-sum(logprobs) / len(logprobs))


def standard_ppl(records: list[TokenRecord]) -> float:
    """Perplexity over all tokens."""
    if not records:
        raise ValueError("standard_ppl requires at least one record")
    return math.exp(-sum(r.logprob_long for r in records) / len(records))


def attention_concentration(masses: list[float], top_k: int) -> float:
    """Share of total attention mass captured by the top_k heaviest positions."""
    if not masses:
        raise ValueError("masses must be non-empty")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    arr = np.asarray(masses, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("attention masses must be >= 0")
    total = float(arr.sum())
    if total <= 0.0:
        raise ValueError("total attention mass is zero")
    k = min(top_k, arr.size)
    top = np.partition(arr, arr.size - k)[arr.size - k:]
    return float(top.sum()) / total


def key_fraction_report(report: KeyTokenReport) -> KeyFractionComparison:
    """Compare the corpus key fraction to the reference value 0.09."""
    return KeyFractionComparison(
        key_fraction=report.key_fraction,
        reference=REFERENCE_KEY_FRACTION,
        deviation=report.key_fraction - REFERENCE_KEY_FRACTION,
    )


# ---------------------------------------------------------------------------
# JSONL input / output
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("doc_id", "index", "logprob_long", "logprob_short")


def read_corpus(path: str | Path) -> tuple[CorpusMeta, list[TokenRecord]]:
    """Parse a corpus JSONL file; any malformed line fails the run with its line number."""
    records: list[TokenRecord] = []
    meta: Optional[CorpusMeta] = None
    last_index: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_number, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(line_number, "expected a JSON object")
            if meta is None:
                if "meta" not in obj:
                    raise CorpusFormatError(
                        line_number, 'first line must be the metadata object {"meta": {...}}'
                    )
                m = obj["meta"]
                if not isinstance(m, dict) or "log_base" not in m:
                    raise CorpusFormatError(line_number, "meta must declare log_base")
                try:
                    meta = CorpusMeta(
                        log_base=m["log_base"],
                        short_context_len=m.get("short_context_len"),
                    )
                except ValueError as exc:
                    raise CorpusFormatError(line_number, str(exc)) from exc
                continue
            missing = [f for f in _REQUIRED_FIELDS if f not in obj]
            if missing:
                raise CorpusFormatError(line_number, f"missing fields: {', '.join(missing)}")
            try:
                rec = TokenRecord(
                    doc_id=str(obj["doc_id"]),
                    index=int(obj["index"]),
                    logprob_long=float(obj["logprob_long"]),
                    logprob_short=float(obj["logprob_short"]),
                    token=obj.get("token"),
                    attention_mass=(
                        float(obj["attention_mass"]) if obj.get("attention_mass") is not None else None
                    ),
                )
            except (TypeError, ValueError) as exc:
                raise CorpusFormatError(line_number, str(exc)) from exc
            prev = last_index.get(rec.doc_id)
            if prev is not None and rec.index <= prev:
                raise CorpusFormatError(
                    line_number,
                    f"indices must be strictly increasing within doc {rec.doc_id!r} "
                    f"({rec.index} after {prev})",
                )
            last_index[rec.doc_id] = rec.index
            records.append(rec)
    if meta is None:
        raise CorpusFormatError(1, "file is empty; expected a metadata line")
    return meta, records


def write_corpus(path: str | Path, meta: CorpusMeta, records: Iterable[TokenRecord]) -> None:
    """Serialize records back to JSONL (round-trips value-identically with read_corpus)."""
    with open(path, "w", encoding="utf-8") as fh:
        meta_obj: dict = {"log_base": meta.log_base}
        if meta.short_context_len is not None:
            meta_obj["short_context_len"] = meta.short_context_len
        fh.write(json.dumps({"meta": meta_obj}, sort_keys=True) + "\n")
        for rec in records:
            obj: dict = {
                "doc_id": rec.doc_id,
                "index": rec.index,
                "logprob_long": rec.logprob_long,
                "logprob_short": rec.logprob_short,
            }
            if rec.token is not None:
                obj["token"] = rec.token
            if rec.attention_mass is not None:
                obj["attention_mass"] = rec.attention_mass
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
