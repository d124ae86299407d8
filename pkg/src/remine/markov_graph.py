"""Sparse absorbing Markov chain over the interpretation space.

The graph stores integer adjacency counts keyed by interpretation; transition
probabilities are derived lazily in double precision so that merge-heavy
builds never accumulate float drift.  The frozen graph is immutable and safe
to share across threads for read-only solves.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .interpretation import LatentSession
from .states import AbsorbingLabel, InterpretationKey

log = logging.getLogger(__name__)

Target = InterpretationKey | AbsorbingLabel


class GraphFormatError(ValueError):
    """Raised when an edge-list file does not parse."""


class InterpretationGraph:
    """Adjacency counts over transient states plus the two absorbing states.

    Every state's row total is exactly the sum of its outgoing edge counts,
    and every state that appears anywhere as a source or transient target is
    a member of the state set.
    """

    def __init__(self, edges: Mapping[InterpretationKey, Mapping[Target, int]]) -> None:
        cleaned: dict[InterpretationKey, dict[Target, int]] = {}
        states: set[InterpretationKey] = set()
        for source, row in edges.items():
            states.add(source)
            kept: dict[Target, int] = {}
            for target, count in row.items():
                if count < 0:
                    raise ValueError("edge counts must be non-negative")
                if count == 0:
                    continue
                kept[target] = int(count)
                if isinstance(target, InterpretationKey):
                    states.add(target)
            if kept:
                cleaned[source] = kept
        self._edges = cleaned
        self._states: tuple[InterpretationKey, ...] = tuple(
            sorted(states, key=InterpretationKey.serialize)
        )
        self._index = {key: i for i, key in enumerate(self._states)}
        self._totals = {src: sum(row.values()) for src, row in cleaned.items()}

    @property
    def states(self) -> tuple[InterpretationKey, ...]:
        return self._states

    def __contains__(self, key: InterpretationKey) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._states)

    def row_total(self, source: InterpretationKey) -> int:
        """Total outgoing count of a state (zero if it never occurs as source)."""
        if source not in self._index:
            raise KeyError(f"unknown state {source.serialize()!r}")
        return self._totals.get(source, 0)

    def edge_count(self, source: InterpretationKey, target: Target) -> int:
        return self._edges.get(source, {}).get(target, 0)

    def transient_row(self, source: InterpretationKey) -> dict[InterpretationKey, int]:
        return {
            t: c
            for t, c in self._edges.get(source, {}).items()
            if isinstance(t, InterpretationKey)
        }

    def absorbing_row(self, source: InterpretationKey) -> dict[AbsorbingLabel, int]:
        return {
            t: c
            for t, c in self._edges.get(source, {}).items()
            if isinstance(t, AbsorbingLabel)
        }

    def transition_prob(self, source: InterpretationKey, target: Target) -> float:
        """One-step transition probability: edge count over the row total."""
        total = self.row_total(source)
        if total == 0:
            raise ValueError(f"state {source.serialize()!r} has no outgoing edges")
        return self.edge_count(source, target) / total

    def total_edge_count(self) -> int:
        return sum(self._totals.values())

    def merge(self, other: "InterpretationGraph") -> "InterpretationGraph":
        edges: dict[InterpretationKey, dict[Target, int]] = defaultdict(lambda: defaultdict(int))
        for graph in (self, other):
            for src, row in graph._edges.items():
                for tgt, c in row.items():
                    edges[src][tgt] += c
        return InterpretationGraph({s: dict(r) for s, r in edges.items()})

    def prune(self, min_edge_count: int) -> "InterpretationGraph":
        """Drop edges rarer than the threshold; row totals follow implicitly."""
        edges = {
            src: {tgt: c for tgt, c in row.items() if c >= min_edge_count}
            for src, row in self._edges.items()
        }
        return InterpretationGraph(edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InterpretationGraph):
            return NotImplemented
        return self._edges == other._edges


def build_graph(
    latent_sessions: Iterable[LatentSession],
    min_edge_count: int = 1,
) -> InterpretationGraph:
    """Count adjacent-pair edges across sessions.

    For a session (h0, ..., hT, label) every consecutive transient pair is
    one edge and the final state contributes one edge into the session's
    absorbing label, so each latent element contributes exactly one outgoing
    edge.  The build is order-independent.
    """
    edges: dict[InterpretationKey, dict[Target, int]] = defaultdict(lambda: defaultdict(int))
    for session in latent_sessions:
        keys = session.keys
        for a, b in zip(keys, keys[1:]):
            edges[a][b] += 1
        edges[keys[-1]][session.label] += 1
    graph = InterpretationGraph({s: dict(r) for s, r in edges.items()})
    if min_edge_count > 1:
        graph = graph.prune(min_edge_count)
    return graph


@dataclass(frozen=True)
class TransitionMatrixView:
    """Row-stochastic view over a subset of states.

    ``Q`` holds transient-to-transient probabilities and ``R`` the two
    absorbing columns (success, failure).  For a subset that is not closed
    under outgoing transient edges, mass leaking outside the subset is
    dropped from ``Q`` and not rerouted, which makes any solve on the view a
    lower bound on the full-graph success probabilities.
    """

    Q: sparse.csr_matrix
    R: np.ndarray
    states: tuple[InterpretationKey, ...]

    @cached_property
    def index(self) -> dict[InterpretationKey, int]:
        return {key: i for i, key in enumerate(self.states)}

    def row_sums(self) -> np.ndarray:
        if len(self.states) == 0:
            return np.zeros(0)
        q_mass = np.asarray(self.Q.sum(axis=1)).ravel()
        return q_mass + self.R.sum(axis=1)


def to_matrix(
    graph: InterpretationGraph,
    states: Sequence[InterpretationKey] | None = None,
) -> TransitionMatrixView:
    """Assemble the probability matrices for a subset of states.

    With the default full state set, every row with outgoing edges sums to
    one across transient plus absorbing targets.
    """
    if states is None:
        subset = graph.states
    else:
        subset = tuple(sorted(set(states), key=InterpretationKey.serialize))
        for key in subset:
            if key not in graph:
                raise KeyError(f"state {key.serialize()!r} not in graph")
    index = {key: i for i, key in enumerate(subset)}
    n = len(subset)
    rows: list[int] = []
    cols: list[int] = []
    data: list[float] = []
    R = np.zeros((n, 2))
    for key in subset:
        i = index[key]
        total = graph.row_total(key)
        if total == 0:
            continue
        for target, count in graph.transient_row(key).items():
            j = index.get(target)
            if j is None:
                continue  # leaked mass is dropped, never rerouted
            rows.append(i)
            cols.append(j)
            data.append(count / total)
        absorbing = graph.absorbing_row(key)
        R[i, 0] = absorbing.get(AbsorbingLabel.SUCCESS, 0) / total
        R[i, 1] = absorbing.get(AbsorbingLabel.FAILURE, 0) / total
    Q = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return TransitionMatrixView(Q=Q, R=R, states=subset)


def write_edges(graph: InterpretationGraph, path: str | Path) -> None:
    """Write the sorted edge-list file; round-trips bit-exactly."""
    lines = []
    for source in graph.states:
        for target, count in graph._edges.get(source, {}).items():
            token = target.serialize() if isinstance(target, InterpretationKey) else target.token
            lines.append((source.serialize(), token, count))
    lines.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt, count in lines:
            fh.write(f"{src}\t{tgt}\t{count}\n")


def read_edges(path: str | Path) -> InterpretationGraph:
    edges: dict[InterpretationKey, dict[Target, int]] = defaultdict(dict)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                src_text, tgt_text, count_text = line.rstrip("\n").split("\t")
                source = InterpretationKey.parse(src_text)
                target: Target
                if "|" in tgt_text:
                    target = InterpretationKey.parse(tgt_text)
                else:
                    target = AbsorbingLabel.from_token(tgt_text)
                edges[source][target] = int(count_text)
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from exc
    return InterpretationGraph(edges)
