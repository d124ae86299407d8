"""Lifting interpretation-level targets back into utterance space, the
statistical blacklist, conflict resolution across mining runs, and the
key-value table export that the lookup service consumes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy import stats as scipy_stats

from .interpretation import BipartiteCounts, p_h_given_u, p_u_given_h
from .solver import SuccessVector, best_target
from .states import InterpretationKey

log = logging.getLogger(__name__)

TABLE_HEADER = "source\ttarget\tscore\tsupport\tmined_at"
_PROVENANCE_PREFIX = "#provenance\t"


class TableFormatError(ValueError):
    """Raised when a rewrite-table or stats file does not parse."""


@dataclass(frozen=True)
class RewriteCandidate:
    """One proposed source-to-target utterance rewrite."""

    source: str
    target: str
    score: float
    support: int
    mined_at: int

    def __post_init__(self) -> None:
        if self.source == self.target:
            raise ValueError("rewrite target must differ from its source")
        if self.score <= 0:
            raise ValueError("rewrite score must be positive")
        if self.support < 0:
            raise ValueError("support must be non-negative")


@dataclass(frozen=True)
class RunProvenance:
    """Identifies one mining run: config hash, corpus id, timestamp."""

    config_hash: str
    corpus_id: str
    mined_at: int

    @property
    def version(self) -> str:
        return f"{self.corpus_id}@{self.mined_at}-{self.config_hash[:8]}"

    @classmethod
    def build(cls, params: Mapping, corpus_id: str, mined_at: int) -> "RunProvenance":
        blob = json.dumps(params, sort_keys=True, default=str)
        digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
        return cls(digest, corpus_id, int(mined_at))


_NO_PROVENANCE = RunProvenance("0" * 16, "unspecified", 0)


@dataclass
class RewriteTable:
    """At most one rewrite per source utterance, plus run provenance."""

    entries: dict[str, RewriteCandidate] = field(default_factory=dict)
    provenance: RunProvenance = _NO_PROVENANCE

    def __post_init__(self) -> None:
        for source, candidate in self.entries.items():
            if source != candidate.source:
                raise ValueError(f"entry keyed {source!r} holds source {candidate.source!r}")


def build_table(
    candidates: Iterable[RewriteCandidate],
    provenance: RunProvenance = _NO_PROVENANCE,
) -> RewriteTable:
    entries: dict[str, RewriteCandidate] = {}
    for candidate in candidates:
        if candidate.source in entries:
            raise ValueError(f"duplicate candidate for source {candidate.source!r}")
        entries[candidate.source] = candidate
    return RewriteTable(entries, provenance)


@dataclass
class FrictionStats:
    """Per-utterance defect telemetry: (defective, total) serve counts."""

    counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for utterance, (defective, total) in self.counts.items():
            if defective < 0 or total < 0 or defective > total:
                raise ValueError(f"bad friction counts for {utterance!r}: {defective}/{total}")

    def get(self, utterance: str) -> tuple[int, int]:
        return self.counts.get(utterance, (0, 0))


def lift_to_utterances(
    vectors: Mapping[InterpretationKey, SuccessVector],
    counts: BipartiteCounts,
    *,
    top_k: int = 5,
    min_support: int = 1,
    mined_at: int = 0,
) -> list[RewriteCandidate]:
    """Score utterance-level rewrites from interpretation-level solves.

    For each source utterance the candidate score of a target utterance is
    the interpretation-marginalized product of the target-emission
    probability, the target's success score from the source interpretation,
    and the source-interpretation probability.  The outer sums run over the
    ``top_k`` most likely interpretations of the source utterance.  Sources
    whose dominant interpretation proposes no rewrite are skipped, so the
    chain's self-partitioning carries over to utterances; the argmax is
    emitted only when it differs from the source and strictly beats the
    source's own score under the same formula.
    """
    candidates: list[RewriteCandidate] = []
    emission_cache: dict[InterpretationKey, dict[str, float]] = {}
    for source_utterance in counts.utterances():
        support = counts.utterance_total(source_utterance)
        if support < min_support:
            continue
        dist = p_h_given_u(counts, source_utterance)
        if not dist:
            continue
        top = sorted(dist.items(), key=lambda kv: (-kv[1], kv[0].serialize()))[:top_k]
        dominant = top[0][0]
        dominant_vector = vectors.get(dominant)
        if dominant_vector is None or best_target(dominant_vector) is None:
            continue
        scores: dict[str, float] = {}
        for h_source, p_h in top:
            vector = vectors.get(h_source)
            if vector is None:
                continue
            for h_target, success_score in vector.entries.items():
                emissions = emission_cache.get(h_target)
                if emissions is None:
                    emissions = p_u_given_h(counts, h_target)
                    emission_cache[h_target] = emissions
                for target_utterance, p_u in emissions.items():
                    scores[target_utterance] = (
                        scores.get(target_utterance, 0.0) + p_u * success_score * p_h
                    )
        if not scores:
            continue
        winner, winner_score = min(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        keep_score = scores.get(source_utterance, 0.0)
        if winner == source_utterance or winner_score <= keep_score:
            continue
        candidates.append(
            RewriteCandidate(source_utterance, winner, winner_score, support, mined_at)
        )
    return candidates


def two_proportion_z(
    rewrite_defective: int,
    rewrite_total: int,
    original_defective: int,
    original_total: int,
) -> tuple[float, float]:
    """Pooled one-sided z-test that the rewrite arm's defect rate is higher.

    Returns (z, p).  A degenerate pooled rate (all or nothing) carries no
    evidence either way and yields (0.0, 0.5).
    """
    p_rewrite = rewrite_defective / rewrite_total
    p_original = original_defective / original_total
    pooled = (rewrite_defective + original_defective) / (rewrite_total + original_total)
    variance = pooled * (1.0 - pooled) * (1.0 / rewrite_total + 1.0 / original_total)
    if variance <= 0.0:
        return 0.0, 0.5
    z = (p_rewrite - p_original) / math.sqrt(variance)
    return z, float(scipy_stats.norm.sf(z))


@dataclass(frozen=True)
class BlacklistDecision:
    candidate: RewriteCandidate
    z: float
    p: float
    rejected: bool
    flag: str | None = None


def blacklist_filter(
    candidates: Sequence[RewriteCandidate],
    stats: FrictionStats,
    p_threshold: float = 0.01,
) -> tuple[list[RewriteCandidate], list[BlacklistDecision]]:
    """Reject candidates whose rewrite arm performs significantly worse.

    A candidate with a zero-total arm cannot be proven harmful and passes
    with an ``insufficient-data`` flag.  The report lists z and p for every
    candidate, rejected or not.
    """
    passed: list[RewriteCandidate] = []
    report: list[BlacklistDecision] = []
    for candidate in candidates:
        rewrite_defective, rewrite_total = stats.get(candidate.target)
        original_defective, original_total = stats.get(candidate.source)
        if rewrite_total == 0 or original_total == 0:
            decision = BlacklistDecision(candidate, 0.0, 0.5, False, "insufficient-data")
            passed.append(candidate)
        else:
            z, p = two_proportion_z(
                rewrite_defective, rewrite_total, original_defective, original_total
            )
            rejected = p < p_threshold
            decision = BlacklistDecision(candidate, z, p, rejected)
            if rejected:
                log.info(
                    "blacklisted %r -> %r (z=%.3f, p=%.2e)",
                    candidate.source, candidate.target, z, p,
                )
            else:
                passed.append(candidate)
        report.append(decision)
    return passed, report


def resolve_conflicts(tables: Sequence[RewriteTable]) -> RewriteTable:
    """Union of tables where, per source, the most recently mined entry wins.

    The result depends only on timestamps (then support, then target text for
    fully tied entries), never on the input order.
    """
    chosen: dict[str, RewriteCandidate] = {}
    for table in tables:
        for source, candidate in table.entries.items():
            incumbent = chosen.get(source)
            if incumbent is None:
                chosen[source] = candidate
                continue
            if candidate.mined_at == incumbent.mined_at and candidate.target != incumbent.target:
                log.warning(
                    "conflicting rewrites for %r at identical timestamp %d; "
                    "breaking tie on support then target",
                    source, candidate.mined_at,
                )
            if _beats(candidate, incumbent):
                chosen[source] = candidate
    provenance = max(
        (t.provenance for t in tables),
        key=lambda p: (p.mined_at, p.version),
        default=_NO_PROVENANCE,
    )
    return RewriteTable(chosen, provenance)


def _beats(challenger: RewriteCandidate, incumbent: RewriteCandidate) -> bool:
    lhs = (challenger.mined_at, challenger.support)
    rhs = (incumbent.mined_at, incumbent.support)
    if lhs != rhs:
        return lhs > rhs
    return challenger.target < incumbent.target


def export_table(table: RewriteTable, path: str | Path) -> None:
    """Write the sorted table file; re-import round-trips bit-exactly."""
    provenance = {
        "config_hash": table.provenance.config_hash,
        "corpus_id": table.provenance.corpus_id,
        "mined_at": table.provenance.mined_at,
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                _PROVENANCE_PREFIX
                + json.dumps(provenance, sort_keys=True, separators=(",", ":"))
                + "\n"
            )
            fh.write(TABLE_HEADER + "\n")
            for source in sorted(table.entries):
                c = table.entries[source]
                fh.write(f"{c.source}\t{c.target}\t{c.score!r}\t{c.support}\t{c.mined_at}\n")
    except OSError as exc:
        raise TableFormatError(f"cannot write table {path}: {exc}") from exc


def load_table(path: str | Path) -> RewriteTable:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise TableFormatError(f"cannot read table {path}: {exc}") from exc
    if not lines or not lines[0].startswith(_PROVENANCE_PREFIX):
        raise TableFormatError(f"{path}: missing provenance line")
    try:
        meta = json.loads(lines[0][len(_PROVENANCE_PREFIX):])
        provenance = RunProvenance(
            str(meta["config_hash"]), str(meta["corpus_id"]), int(meta["mined_at"])
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TableFormatError(f"{path}: bad provenance: {exc}") from exc
    if len(lines) < 2 or lines[1] != TABLE_HEADER:
        raise TableFormatError(f"{path}: missing or wrong header")
    entries: dict[str, RewriteCandidate] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            source, target, score, support, mined_at = line.split("\t")
            candidate = RewriteCandidate(source, target, float(score), int(support), int(mined_at))
        except ValueError as exc:
            raise TableFormatError(f"{path}:{lineno}: {exc}") from exc
        if source in entries:
            raise TableFormatError(f"{path}:{lineno}: duplicate source {source!r}")
        entries[source] = candidate
    return RewriteTable(entries, provenance)


def write_stats(stats: FrictionStats, path: str | Path) -> None:
    """Write the sorted ``utterance \\t defective \\t total`` stats file."""
    with open(path, "w", encoding="utf-8") as fh:
        for utterance in sorted(stats.counts):
            defective, total = stats.counts[utterance]
            fh.write(f"{utterance}\t{defective}\t{total}\n")


def read_stats(path: str | Path) -> FrictionStats:
    counts: dict[str, tuple[int, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                utterance, defective, total = line.rstrip("\n").split("\t")
                counts[utterance] = (int(defective), int(total))
            except ValueError as exc:
                raise TableFormatError(f"{path}:{lineno}: {exc}") from exc
    return FrictionStats(counts)
