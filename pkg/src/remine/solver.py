"""Success-probability solving on the absorbing chain.

Three routes are provided: the exact fundamental-matrix solution, a bounded
breadth-first per-source approximation that solves exactly on a local
submatrix (a lower bound on the exact scores by construction), and a seeded
Monte Carlo random-walk oracle used for verification only.

For a source state s and target t, the score of t is the expected number of
visits to t before absorption times t's one-step success probability, which
equals the probability that the walk from s is absorbed into success
directly from t.  Scores over all targets therefore sum to the total success
probability from s and never exceed one (up to float noise).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .markov_graph import InterpretationGraph, TransitionMatrixView, to_matrix
from .states import AbsorbingLabel, InterpretationKey

log = logging.getLogger(__name__)

_RESIDUAL_TOL = 1e-9
# Entries at or below this are numerical dust from the sparse solve, not
# genuine reachability; keeping them could fabricate no-op rewrites.
_SUPPORT_EPS = 1e-12


class SolverError(RuntimeError):
    pass


class NonAbsorbingComponentError(SolverError):
    """A strongly-connected set of states retains all its probability mass."""

    def __init__(self, component: Sequence[int], names: Sequence[str] | None = None):
        self.component = list(component)
        self.names = list(names) if names is not None else None
        shown = self.names if self.names is not None else self.component
        super().__init__(
            "no absorbing escape from strongly-connected component "
            f"{sorted(shown)}"
        )


@dataclass(frozen=True)
class SolveConfig:
    """Knobs for the per-source solve."""

    max_depth: int = 5
    prune_epsilon: float = 1e-6
    method: str = "exact"  # "exact" or "bfs"

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 <= self.prune_epsilon < 1.0:
            raise ValueError("prune_epsilon must be in [0, 1)")
        if self.method not in ("exact", "bfs"):
            raise ValueError(f"unknown solve method {self.method!r}")


@dataclass
class SuccessVector:
    """Per-source success scores over reachable targets."""

    source: InterpretationKey
    entries: dict[InterpretationKey, float] = field(default_factory=dict)
    own_success: float = 0.0

    def value(self, target: InterpretationKey) -> float:
        return self.entries.get(target, 0.0)


def _as_csr(Q) -> sparse.csr_matrix:
    if sparse.issparse(Q):
        return Q.tocsr()
    return sparse.csr_matrix(np.asarray(Q, dtype=float))


def _trap_component(Q: sparse.csr_matrix) -> list[int] | None:
    """Find a strongly-connected component that keeps all its mass internal."""
    n = Q.shape[0]
    if n == 0:
        return None
    n_comp, labels = csgraph.connected_components(Q, directed=True, connection="strong")
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        internal = np.asarray(Q[members][:, members].sum(axis=1)).ravel()
        if len(members) and np.all(internal >= 1.0 - 1e-9):
            return members.tolist()
    return None


def _check_absorbing(Q: sparse.csr_matrix, states: Sequence[InterpretationKey] | None) -> None:
    trap = _trap_component(Q)
    if trap is not None:
        names = [states[i].serialize() for i in trap] if states is not None else None
        raise NonAbsorbingComponentError(trap, names)


def fundamental_matrix(Q) -> np.ndarray:
    """Expected-visit matrix of the transient sub-chain: inverse of (I - Q).

    ``Q`` must be sub-stochastic with every state able to reach absorption;
    a strongly-connected component with no escape raises
    :class:`NonAbsorbingComponentError` naming its members.  The returned
    inverse is verified to a max-norm residual below 1e-9.
    """
    Qc = _as_csr(Q)
    n = Qc.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    _check_absorbing(Qc, None)
    A = np.eye(n) - Qc.toarray()
    try:
        N = np.linalg.solve(A, np.eye(n))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - trap check fires first
        raise SolverError(f"(I - Q) is singular: {exc}") from exc
    residual = np.max(np.abs(A @ N - np.eye(n)))
    if residual >= _RESIDUAL_TOL:
        raise SolverError(f"fundamental matrix residual {residual:.3e} exceeds {_RESIDUAL_TOL}")
    return N


class _ViewSolver:
    """Caches one LU factorization of (I - Q)^T for many per-source solves."""

    def __init__(self, view: TransitionMatrixView) -> None:
        _check_absorbing(view.Q, view.states)
        n = len(view.states)
        self.view = view
        self.index = view.index
        self._lu = None
        if n:
            A = (sparse.identity(n, format="csc") - view.Q.T).tocsc()
            self._lu = splu(A)

    def visit_row(self, local_source: int) -> np.ndarray:
        n = len(self.view.states)
        e = np.zeros(n)
        e[local_source] = 1.0
        return self._lu.solve(e)

    def success_vector(self, source: InterpretationKey) -> SuccessVector:
        s = self.index[source]
        visits = self.visit_row(s)
        scores = visits * self.view.R[:, 0]
        entries = {
            self.view.states[t]: float(scores[t])
            for t in np.flatnonzero(scores > _SUPPORT_EPS)
        }
        return SuccessVector(source, entries, float(self.view.R[s, 0]))


def success_vector_exact(view: TransitionMatrixView, source: InterpretationKey) -> SuccessVector:
    """Exact success scores for one source over the view's state set."""
    if source not in view.index:
        raise KeyError(f"source {source.serialize()!r} not in view")
    return _ViewSolver(view).success_vector(source)


def success_vector_bfs(
    graph: InterpretationGraph,
    source: InterpretationKey,
    cfg: SolveConfig = SolveConfig(method="bfs"),
) -> SuccessVector:
    """Bounded-depth approximation of the exact solve.

    Simple (non-cyclic, not-yet-absorbed) paths from the source are traversed
    up to ``cfg.max_depth`` transitions, dropping any path whose prefix
    probability falls below ``cfg.prune_epsilon``.  The states visited form a
    local submatrix (which keeps every edge among them, self-loops included)
    that is then solved exactly.  Because leaked mass is dropped, every score
    is a lower bound on its exact counterpart, with equality whenever nothing
    was truncated.
    """
    if source not in graph:
        return SuccessVector(source, {}, 0.0)
    visited = {source}
    # frontier rows: (last state, states on the path, prefix probability)
    frontier: list[tuple[InterpretationKey, frozenset[InterpretationKey], float]] = [
        (source, frozenset((source,)), 1.0)
    ]
    for _ in range(cfg.max_depth):
        next_frontier = []
        for last, members, prob in frontier:
            total = graph.row_total(last)
            if total == 0:
                continue
            for target, count in graph.transient_row(last).items():
                if target in members:
                    continue
                branch = prob * (count / total)
                if branch < cfg.prune_epsilon:
                    continue
                visited.add(target)
                next_frontier.append((target, members | {target}, branch))
        frontier = next_frontier
        if not frontier:
            break
    view = to_matrix(graph, sorted(visited, key=InterpretationKey.serialize))
    return success_vector_exact(view, source)


def best_target(vector: SuccessVector) -> tuple[InterpretationKey, float] | None:
    """Argmax target, gated on strictly beating the source's own success.

    Returns ``None`` (no rewrite) when there are no entries, when the source
    itself wins the argmax, or when the best score does not strictly exceed
    the source's one-step success probability.  Ties break toward the
    lexicographically smallest serialized key.
    """
    if not vector.entries:
        return None
    target, score = min(
        vector.entries.items(), key=lambda kv: (-kv[1], kv[0].serialize())
    )
    if target == vector.source:
        return None
    if score > vector.own_success:
        return (target, score)
    return None


def monte_carlo_success(
    graph: InterpretationGraph,
    source: InterpretationKey,
    walks: int,
    seed: int,
    max_steps: int = 1_000_000,
) -> dict[InterpretationKey, float]:
    """Empirical success scores from seeded random walks.

    Each walk follows the full row distributions until absorbed; the walk is
    credited to the transient state it occupied when absorbed into success.
    Deterministic for a fixed seed, with an independent generator per source
    so that per-source runs can be parallelized reproducibly.
    """
    if walks < 1:
        raise ValueError("walks must be >= 1")
    if source not in graph:
        raise KeyError(f"source {source.serialize()!r} not in graph")
    states = graph.states
    index = {key: i for i, key in enumerate(states)}
    n = len(states)
    success_code, failure_code = n, n + 1

    target_arrays: list[np.ndarray | None] = []
    cum_arrays: list[np.ndarray | None] = []
    for key in states:
        total = graph.row_total(key)
        if total == 0:
            target_arrays.append(None)
            cum_arrays.append(None)
            continue
        targets = []
        probs = []
        for tgt, count in sorted(
            graph.transient_row(key).items(), key=lambda kv: kv[0].serialize()
        ):
            targets.append(index[tgt])
            probs.append(count / total)
        absorbing = graph.absorbing_row(key)
        for label, code in ((AbsorbingLabel.SUCCESS, success_code),
                            (AbsorbingLabel.FAILURE, failure_code)):
            count = absorbing.get(label, 0)
            if count:
                targets.append(code)
                probs.append(count / total)
        target_arrays.append(np.array(targets, dtype=np.int64))
        cum_arrays.append(np.cumsum(probs))

    rng = np.random.default_rng([int(seed), index[source]])
    position = np.full(walks, index[source], dtype=np.int64)
    active = np.ones(walks, dtype=bool)
    absorbed_from = np.zeros(n, dtype=np.int64)

    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            log.warning("monte carlo walk cap hit with %d walks active", int(active.sum()))
            break
        for state in np.unique(position[active]):
            mask = active & (position == state)
            count = int(mask.sum())
            targets = target_arrays[state]
            if targets is None:
                active[mask] = False  # dead-end state: never absorbed
                continue
            draws = rng.random(count)
            picks = np.minimum(
                np.searchsorted(cum_arrays[state], draws, side="right"),
                len(targets) - 1,
            )
            chosen = targets[picks]
            success_hits = int((chosen == success_code).sum())
            if success_hits:
                absorbed_from[state] += success_hits
            finished = (chosen == success_code) | (chosen == failure_code)
            idx = np.flatnonzero(mask)
            position[idx[~finished]] = chosen[~finished]
            active[idx[finished]] = False

    return {
        states[i]: absorbed_from[i] / walks
        for i in np.flatnonzero(absorbed_from)
    }


def solve_all(
    graph: InterpretationGraph,
    cfg: SolveConfig = SolveConfig(),
    sources: Iterable[InterpretationKey] | None = None,
    n_jobs: int = 1,
) -> dict[InterpretationKey, SuccessVector]:
    """Solve every requested source; the graph stays immutable throughout.

    The exact route shares one factorization across sources; the bfs route
    runs independent per-source solves, in a thread pool when ``n_jobs`` > 1.
    """
    wanted = list(sources) if sources is not None else list(graph.states)
    if cfg.method == "exact":
        if not len(graph):
            return {}
        solver = _ViewSolver(to_matrix(graph))
        return {s: solver.success_vector(s) for s in wanted}
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            vectors = list(pool.map(lambda s: success_vector_bfs(graph, s, cfg), wanted))
        return dict(zip(wanted, vectors))
    return {s: success_vector_bfs(graph, s, cfg) for s in wanted}


def write_vectors(vectors: Mapping[InterpretationKey, SuccessVector], path: str | Path) -> None:
    """Write ``source \\t target \\t score \\t own_success`` rows.

    Reported scores are clamped to 1.0; raw values stay in memory for the
    argmax.  Sources with no entries are omitted.
    """
    rows = []
    for source in sorted(vectors, key=InterpretationKey.serialize):
        vector = vectors[source]
        for target in sorted(vector.entries, key=InterpretationKey.serialize):
            rows.append(
                f"{source.serialize()}\t{target.serialize()}\t"
                f"{min(vector.entries[target], 1.0)!r}\t{vector.own_success!r}\n"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(rows)


def read_vectors(path: str | Path) -> dict[InterpretationKey, SuccessVector]:
    vectors: dict[InterpretationKey, SuccessVector] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            src_text, tgt_text, score_text, own_text = line.rstrip("\n").split("\t")
            source = InterpretationKey.parse(src_text)
            vector = vectors.setdefault(
                source, SuccessVector(source, {}, float(own_text))
            )
            vector.entries[InterpretationKey.parse(tgt_text)] = float(score_text)
    return vectors
