"""Estimator-style facade over the mining pipeline.

``ReformulationMiner.fit`` consumes a raw event log (lines or parsed events)
and learns the rewrite table; ``predict``/``transform`` map utterances
through it.  Parameters follow scikit-learn conventions so the miner
composes with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import time
from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import (
    DEFAULT_FAILURE_CATEGORIES,
    DEFAULT_GAP_MS,
    DEFAULT_INTERJECTION_INTENTS,
    IngestStats,
    UtteranceEvent,
    finalize_sessions,
    parse_events,
    sessionize,
)
from .interpretation import project
from .markov_graph import build_graph
from .normalize import normalize_utterance
from .rewrite_miner import (
    FrictionStats,
    RunProvenance,
    blacklist_filter,
    build_table,
    lift_to_utterances,
)
from .solver import SolveConfig, solve_all


class ReformulationMiner(TransformerMixin, BaseEstimator):
    """Learns utterance rewrites from timestamped interaction logs."""

    def __init__(
        self,
        gap_ms: int = DEFAULT_GAP_MS,
        interjection_intents: tuple[str, ...] = DEFAULT_INTERJECTION_INTENTS,
        failure_categories: tuple[str, ...] = DEFAULT_FAILURE_CATEGORIES,
        min_pair_count: int = 1,
        min_edge_count: int = 1,
        method: str = "exact",
        max_depth: int = 5,
        prune_epsilon: float = 1e-6,
        top_k_interpretations: int = 5,
        min_support: int = 1,
        p_threshold: float = 0.01,
        n_jobs: int = 1,
    ) -> None:
        self.gap_ms = gap_ms
        self.interjection_intents = interjection_intents
        self.failure_categories = failure_categories
        self.min_pair_count = min_pair_count
        self.min_edge_count = min_edge_count
        self.method = method
        self.max_depth = max_depth
        self.prune_epsilon = prune_epsilon
        self.top_k_interpretations = top_k_interpretations
        self.min_support = min_support
        self.p_threshold = p_threshold
        self.n_jobs = n_jobs

    def _coerce_events(self, X) -> list[UtteranceEvent]:
        items = list(X)
        if all(isinstance(item, UtteranceEvent) for item in items):
            return items
        if all(isinstance(item, str) for item in items):
            events, _ = parse_events(
                items,
                interjection_intents=self.interjection_intents,
                failure_categories=self.failure_categories,
            )
            return events
        raise TypeError("X must be raw record lines or UtteranceEvent instances")

    def fit(
        self,
        X: Iterable[str] | Iterable[UtteranceEvent],
        y=None,
        *,
        friction_stats: FrictionStats | None = None,
        mined_at: int | None = None,
        corpus_id: str = "in-memory",
    ) -> "ReformulationMiner":
        events = self._coerce_events(X)
        stats = IngestStats(lines=len(events), parsed=len(events))
        sessions = finalize_sessions(sessionize(events, self.gap_ms, stats), stats)
        latents, counts = project(sessions)
        if self.min_pair_count > 1:
            counts = counts.prune(self.min_pair_count)
        graph = build_graph(latents, min_edge_count=self.min_edge_count)
        cfg = SolveConfig(
            max_depth=self.max_depth,
            prune_epsilon=self.prune_epsilon,
            method=self.method,
        )
        vectors = solve_all(graph, cfg, n_jobs=self.n_jobs)
        stamp = int(time.time() * 1000) if mined_at is None else int(mined_at)
        candidates = lift_to_utterances(
            vectors,
            counts,
            top_k=self.top_k_interpretations,
            min_support=self.min_support,
            mined_at=stamp,
        )
        report = None
        if friction_stats is not None:
            candidates, report = blacklist_filter(candidates, friction_stats, self.p_threshold)
        provenance = RunProvenance.build(self.get_params(), corpus_id, stamp)

        self.ingest_stats_ = stats
        self.counts_ = counts
        self.graph_ = graph
        self.vectors_ = vectors
        self.candidates_ = candidates
        self.blacklist_report_ = report
        self.table_ = build_table(candidates, provenance)
        return self

    def predict(self, X: Iterable[str]) -> list[str]:
        """Rewrite each utterance, or return it unchanged on a table miss."""
        check_is_fitted(self, "table_")
        out = []
        for utterance in X:
            text = normalize_utterance(utterance)
            entry = self.table_.entries.get(text)
            out.append(entry.target if entry is not None else text)
        return out

    def transform(self, X: Iterable[str]) -> list[str]:
        return self.predict(X)
