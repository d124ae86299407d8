"""Rewrite mining from conversational session logs.

Sessions are cut from timestamped utterance events, projected into the NLU
interpretation space, and assembled into a sparse absorbing Markov chain
whose solution ranks reformulation targets; winning targets are lifted back
to utterances, statistically blacklisted, and exported as a key-value table
served by a hot-reloadable lookup service.
"""

from .estimator import ReformulationMiner
from .ingest import (
    FeedbackKind,
    FeedbackSignal,
    IngestStats,
    Session,
    UtteranceEvent,
    finalize_session,
    finalize_sessions,
    ingest_lines,
    parse_events,
    sessionize,
)
from .interpretation import (
    BipartiteCounts,
    LatentSession,
    p_h_given_u,
    p_u_given_h,
    project,
)
from .markov_graph import InterpretationGraph, TransitionMatrixView, build_graph, to_matrix
from .normalize import normalize_utterance
from .rewrite_miner import (
    BlacklistDecision,
    FrictionStats,
    RewriteCandidate,
    RewriteTable,
    RunProvenance,
    blacklist_filter,
    build_table,
    export_table,
    lift_to_utterances,
    load_table,
    resolve_conflicts,
    two_proportion_z,
)
from .service import LookupResponse, RewriteService, build_server
from .solver import (
    NonAbsorbingComponentError,
    SolveConfig,
    SuccessVector,
    best_target,
    fundamental_matrix,
    monte_carlo_success,
    solve_all,
    success_vector_bfs,
    success_vector_exact,
)
from .states import AbsorbingLabel, InterpretationKey

__version__ = "0.1.0"

__all__ = [
    "AbsorbingLabel",
    "BipartiteCounts",
    "BlacklistDecision",
    "FeedbackKind",
    "FeedbackSignal",
    "FrictionStats",
    "IngestStats",
    "InterpretationGraph",
    "InterpretationKey",
    "LatentSession",
    "LookupResponse",
    "NonAbsorbingComponentError",
    "ReformulationMiner",
    "RewriteCandidate",
    "RewriteService",
    "RewriteTable",
    "RunProvenance",
    "Session",
    "SolveConfig",
    "SuccessVector",
    "TransitionMatrixView",
    "UtteranceEvent",
    "best_target",
    "blacklist_filter",
    "build_graph",
    "build_server",
    "build_table",
    "export_table",
    "finalize_session",
    "finalize_sessions",
    "fundamental_matrix",
    "ingest_lines",
    "lift_to_utterances",
    "load_table",
    "monte_carlo_success",
    "normalize_utterance",
    "p_h_given_u",
    "p_u_given_h",
    "parse_events",
    "project",
    "resolve_conflicts",
    "sessionize",
    "solve_all",
    "success_vector_bfs",
    "success_vector_exact",
    "to_matrix",
    "two_proportion_z",
]
