"""Projection of sessions into interpretation space, plus the bipartite
utterance-interpretation co-occurrence counts and the two conditional
distributions derived from them.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .ingest import Session
from .states import AbsorbingLabel, InterpretationKey, UNPARSED_KEY

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatentSession:
    """A session projected into interpretation space, with its outcome."""

    keys: tuple[InterpretationKey, ...]
    label: AbsorbingLabel

    def __post_init__(self) -> None:
        if not self.keys:
            raise ValueError("latent session must contain at least one key")


class BipartiteCounts:
    """Sparse co-occurrence counts between utterances and interpretations.

    Accumulation is a commutative merge, so counts can be sharded by session
    and combined in any order.  Distribution queries are read-only.
    """

    def __init__(self) -> None:
        self._by_utterance: dict[str, dict[InterpretationKey, int]] = defaultdict(dict)
        self._by_interpretation: dict[InterpretationKey, dict[str, int]] = defaultdict(dict)
        self.unparsed_events = 0

    def add(self, utterance: str, key: InterpretationKey, count: int = 1) -> None:
        if count <= 0:
            raise ValueError("count must be positive")
        row = self._by_utterance[utterance]
        row[key] = row.get(key, 0) + count
        col = self._by_interpretation[key]
        col[utterance] = col.get(utterance, 0) + count

    def pair_count(self, utterance: str, key: InterpretationKey) -> int:
        return self._by_utterance.get(utterance, {}).get(key, 0)

    def utterance_total(self, utterance: str) -> int:
        return sum(self._by_utterance.get(utterance, {}).values())

    def interpretation_total(self, key: InterpretationKey) -> int:
        return sum(self._by_interpretation.get(key, {}).values())

    def utterances(self) -> list[str]:
        return sorted(self._by_utterance)

    def interpretations(self) -> list[InterpretationKey]:
        return sorted(self._by_interpretation, key=InterpretationKey.serialize)

    def merge(self, other: "BipartiteCounts") -> "BipartiteCounts":
        merged = BipartiteCounts()
        for counts in (self, other):
            for u, row in counts._by_utterance.items():
                for h, c in row.items():
                    merged.add(u, h, c)
        merged.unparsed_events = self.unparsed_events + other.unparsed_events
        return merged

    def prune(self, min_pair_count: int) -> "BipartiteCounts":
        """Drop pairs below the support threshold; totals follow implicitly."""
        pruned = BipartiteCounts()
        for u, row in self._by_utterance.items():
            for h, c in row.items():
                if c >= min_pair_count:
                    pruned.add(u, h, c)
        pruned.unparsed_events = self.unparsed_events
        return pruned

    def items(self) -> list[tuple[str, InterpretationKey, int]]:
        rows = [
            (u, h, c)
            for u, row in self._by_utterance.items()
            for h, c in row.items()
        ]
        rows.sort(key=lambda row: (row[0], row[1].serialize()))
        return rows

    def __len__(self) -> int:
        return sum(len(row) for row in self._by_utterance.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BipartiteCounts):
            return NotImplemented
        return {u: row for u, row in self._by_utterance.items() if row} == {
            u: row for u, row in other._by_utterance.items() if row
        }


def project(sessions: Sequence[Session]) -> tuple[list[LatentSession], BipartiteCounts]:
    """Project finalized sessions into interpretation space.

    Each latent session is the ordered list of interpretation keys of its
    source events plus the session label; every event occurrence increments
    the corresponding (utterance, interpretation) pair count.  Events whose
    interpretation is missing map onto the reserved unparsed key.
    """
    counts = BipartiteCounts()
    latents: list[LatentSession] = []
    for session in sessions:
        if session.label is None:
            raise ValueError("project requires finalized (labeled) sessions")
        keys = []
        for event in session.events:
            key = event.interpretation
            if key is None:
                key = UNPARSED_KEY
                counts.unparsed_events += 1
            keys.append(key)
            counts.add(event.utterance, key)
        latents.append(LatentSession(tuple(keys), session.label))
    if counts.unparsed_events:
        log.warning(
            "%d events had no interpretation; mapped to %s",
            counts.unparsed_events,
            UNPARSED_KEY.serialize(),
        )
    return latents, counts


def p_h_given_u(counts: BipartiteCounts, utterance: str) -> dict[InterpretationKey, float]:
    """Conditional distribution over interpretations for one utterance.

    Unknown utterances yield an empty distribution; the caller decides.
    """
    row = counts._by_utterance.get(utterance)
    if not row:
        return {}
    total = sum(row.values())
    return {h: c / total for h, c in row.items() if c > 0}


def p_u_given_h(counts: BipartiteCounts, key: InterpretationKey) -> dict[str, float]:
    """Conditional distribution over utterances for one interpretation."""
    col = counts._by_interpretation.get(key)
    if not col:
        return {}
    total = sum(col.values())
    return {u: c / total for u, c in col.items() if c > 0}


def write_counts(counts: BipartiteCounts, path: str | Path) -> None:
    """Write the sorted ``utterance \\t key \\t count`` inspection file."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, h, c in counts.items():
            fh.write(f"{u}\t{h.serialize()}\t{c}\n")


def read_counts(path: str | Path) -> BipartiteCounts:
    counts = BipartiteCounts()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            u, key_text, c = line.rstrip("\n").split("\t")
            counts.add(u, InterpretationKey.parse(key_text), int(c))
    return counts
