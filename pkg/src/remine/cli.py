"""Command-line entry points: ``mine`` (ingest/build/solve/rewrite),
``sim`` (generate/evaluate), and ``serve`` (the lookup service).

Each subcommand prints a one-line JSON summary on success.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import simulator
from .ingest import (
    DEFAULT_FAILURE_CATEGORIES,
    DEFAULT_GAP_MS,
    DEFAULT_INTERJECTION_INTENTS,
    ingest_lines,
    read_event_lines,
    read_sessions,
    write_sessions,
)
from .interpretation import project, read_counts, write_counts
from .markov_graph import build_graph, read_edges, write_edges
from .rewrite_miner import (
    RunProvenance,
    blacklist_filter,
    build_table,
    export_table,
    lift_to_utterances,
    load_table,
    read_stats,
)
from .service import RewriteService, build_server, run_server
from .solver import SolveConfig, read_vectors, solve_all, write_vectors

log = logging.getLogger(__name__)

PORT_ENV_VAR = "REMINE_PORT"


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _bool_flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def resolve_port(cli_port: int, env: dict | None = None) -> int:
    """The environment variable wins over the command-line port."""
    value = (env if env is not None else os.environ).get(PORT_ENV_VAR)
    return int(value) if value else cli_port


def _build_mine_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mine", description="Batch rewrite mining")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("ingest", help="Parse a raw event log into labeled sessions")
    p.add_argument("--input", required=True, help="line-delimited event log")
    p.add_argument("--gap-ms", type=int, default=DEFAULT_GAP_MS,
                   help="session gap threshold in milliseconds")
    p.add_argument("--interjections", type=_csv_list,
                   default=DEFAULT_INTERJECTION_INTENTS,
                   help="comma-separated interjection intent names")
    p.add_argument("--failure-categories", type=_csv_list,
                   default=DEFAULT_FAILURE_CATEGORIES,
                   help="response categories treated as implicit failure")
    p.add_argument("--out", required=True, help="sessions output (JSON lines)")
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("build", help="Build co-occurrence counts and the chain graph")
    p.add_argument("--sessions", required=True)
    p.add_argument("--min-pair-count", type=int, default=1)
    p.add_argument("--min-edge-count", type=int, default=1)
    p.add_argument("--out-counts", required=True)
    p.add_argument("--out-graph", required=True)
    p.set_defaults(handler=_cmd_build)

    p = sub.add_parser("solve", help="Compute per-source success vectors")
    p.add_argument("--graph", required=True)
    p.add_argument("--method", choices=("exact", "bfs"), default="exact")
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--prune-epsilon", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("rewrite", help="Lift, blacklist, and export the rewrite table")
    p.add_argument("--vectors", required=True)
    p.add_argument("--counts", required=True)
    p.add_argument("--stats", help="friction stats file; omit to skip the blacklist")
    p.add_argument("--p-threshold", type=float, default=0.01)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--min-support", type=int, default=1)
    p.add_argument("--mined-at", type=int, default=None,
                   help="mining timestamp in epoch ms (default: now)")
    p.add_argument("--corpus-id", default=None,
                   help="corpus identifier recorded in provenance")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_rewrite)
    return parser


def _cmd_ingest(args: argparse.Namespace) -> int:
    lines = read_event_lines(args.input)
    sessions, stats = ingest_lines(
        lines,
        gap_ms=args.gap_ms,
        interjection_intents=args.interjections,
        failure_categories=args.failure_categories,
    )
    write_sessions(sessions, args.out)
    _emit({"command": "ingest", "out": args.out, **stats.as_dict()})
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    sessions = read_sessions(args.sessions)
    latents, counts = project(sessions)
    if args.min_pair_count > 1:
        counts = counts.prune(args.min_pair_count)
    graph = build_graph(latents, min_edge_count=args.min_edge_count)
    write_counts(counts, args.out_counts)
    write_edges(graph, args.out_graph)
    _emit(
        {
            "command": "build",
            "sessions": len(sessions),
            "states": len(graph),
            "pairs": len(counts),
            "edges": graph.total_edge_count(),
        }
    )
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    graph = read_edges(args.graph)
    cfg = SolveConfig(
        max_depth=args.max_depth,
        prune_epsilon=args.prune_epsilon,
        method=args.method,
    )
    vectors = solve_all(graph, cfg, n_jobs=args.jobs)
    write_vectors(vectors, args.out)
    nonempty = sum(1 for v in vectors.values() if v.entries)
    _emit({"command": "solve", "method": args.method, "sources": len(vectors),
           "sources_with_targets": nonempty, "out": args.out})
    return 0


def _cmd_rewrite(args: argparse.Namespace) -> int:
    vectors = read_vectors(args.vectors)
    counts = read_counts(args.counts)
    mined_at = int(time.time() * 1000) if args.mined_at is None else args.mined_at
    candidates = lift_to_utterances(
        vectors,
        counts,
        top_k=args.top_k,
        min_support=args.min_support,
        mined_at=mined_at,
    )
    rejected = 0
    if args.stats:
        stats = read_stats(args.stats)
        candidates, report = blacklist_filter(candidates, stats, args.p_threshold)
        rejected = sum(1 for d in report if d.rejected)
    else:
        log.warning("no friction stats supplied; blacklist filter skipped")
    corpus_id = args.corpus_id or Path(args.vectors).stem
    provenance = RunProvenance.build(
        {
            "top_k": args.top_k,
            "min_support": args.min_support,
            "p_threshold": args.p_threshold,
            "vectors": str(args.vectors),
            "counts": str(args.counts),
        },
        corpus_id,
        mined_at,
    )
    table = build_table(candidates, provenance)
    export_table(table, args.out)
    _emit(
        {
            "command": "rewrite",
            "candidates": len(candidates) + rejected,
            "blacklisted": rejected,
            "entries": len(table.entries),
            "version": provenance.version,
            "out": args.out,
        }
    )
    return 0


def main_mine(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_mine_parser().parse_args(argv)
    return args.handler(args)


def _build_sim_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim", description="Synthetic world simulator")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("generate", help="Generate an event log from a world config")
    p.add_argument("--spec", required=True, help="world config (JSON)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("evaluate", help="Replay a log, optionally applying a rewrite table")
    p.add_argument("--events", required=True)
    p.add_argument("--table", help="rewrite table file; omit for the no-rewrite baseline")
    p.add_argument("--spec", help="world config for true success probabilities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap-ms", type=int, default=DEFAULT_GAP_MS)
    p.set_defaults(handler=_cmd_evaluate)
    return parser


def _cmd_generate(args: argparse.Namespace) -> int:
    spec = simulator.load_world(args.spec)
    truth = simulator.generate(spec, args.seed, args.out)
    _emit(
        {
            "command": "generate",
            "out": args.out,
            "planted_pairs": len(truth.pairs),
            "population": spec.population,
        }
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    table = load_table(args.table) if args.table else None
    world = simulator.load_world(args.spec) if args.spec else None
    rate = simulator.evaluate_defect_rate(
        args.events, table, world=world, seed=args.seed, gap_ms=args.gap_ms
    )
    _emit(
        {
            "command": "evaluate",
            "events": args.events,
            "table": args.table,
            "defect_rate": rate,
        }
    )
    return 0


def main_sim(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_sim_parser().parse_args(argv)
    return args.handler(args)


def main_serve(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="serve", description="Rewrite lookup service")
    parser.add_argument("--table", required=True, help="rewrite table file")
    parser.add_argument("--port", type=int, default=8080,
                        help=f"listen port (env {PORT_ENV_VAR} overrides)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--disabled", type=_bool_flag, default=False,
                        help="start with the feature toggle off")
    args = parser.parse_args(argv)

    port = resolve_port(args.port)
    service = RewriteService.from_file(args.table, disabled=args.disabled)
    server = build_server(service, host=args.host, port=port)
    _emit(
        {
            "command": "serve",
            "host": args.host,
            "port": server.server_address[1],
            "table_version": service.table_version,
            "disabled": service.disabled,
        }
    )
    run_server(server)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main_mine())
