"""Shared test fixtures: the canonical three-session worked example and
seeded random-graph generators for the solver property tests."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from remine import (
    AbsorbingLabel,
    InterpretationGraph,
    InterpretationKey,
    ingest_lines,
    monte_carlo_success,
    project,
    success_vector_exact,
    to_matrix,
)
from remine.interpretation import LatentSession
from remine.markov_graph import build_graph

H0 = InterpretationKey.parse("Music|PlayMusicIntent|SongName:despicable me")
H1 = InterpretationKey.parse("Music|SearchMusicIntent|AlbumName:despicable me")
H2 = InterpretationKey.parse("Music|PlayMusicIntent|AlbumName:despicable me")
H3 = InterpretationKey.parse("Video|PlayVideoIntent|VideoName:despicable me")

U_H0 = "play despicable me song"
U_H1 = "search despicable me album"
U_H2 = "play despicable me"
U_H3A = "play the despicable me movie"
U_H3B = "play despicable me video"

_ALBUM_ROWS = [
    # session (a): two tries in song space, a search, then the album plays
    ("c1", "d1", 0, U_H0, H0, "none", "", "no-match"),
    ("c1", "d1", 5_000, U_H0, H0, "none", "", "no-match"),
    ("c1", "d1", 12_000, U_H1, H1, "none", "", "no-match"),
    ("c1", "d1", 20_000, U_H2, H2, "none", "", "ok"),
    # session (b): detours through the video domain before succeeding
    ("c2", "d1", 0, U_H0, H0, "none", "", "no-match"),
    ("c2", "d1", 7_000, U_H3A, H3, "none", "", "no-match"),
    ("c2", "d1", 15_000, U_H3B, H3, "none", "", "no-match"),
    ("c2", "d1", 24_000, U_H2, H2, "none", "", "ok"),
    # session (c): one failed try, abandoned
    ("c3", "d1", 0, U_H0, H0, "none", "", "no-match"),
]


def album_lines() -> list[str]:
    """The canonical worked-example corpus: 9 events, 3 customer-device keys."""
    return [
        "\t".join(
            (c, d, str(t), u, k.serialize(), kind, detail, category)
        )
        for c, d, t, u, k, kind, detail, category in _ALBUM_ROWS
    ]


def album_sessions():
    sessions, _ = ingest_lines(album_lines())
    return sessions


def album_graph_and_counts():
    latents, counts = project(album_sessions())
    return build_graph(latents), counts


def latent(keys, label=AbsorbingLabel.SUCCESS) -> LatentSession:
    return LatentSession(tuple(keys), label)


def state_keys(n: int) -> list[InterpretationKey]:
    return [InterpretationKey("d", f"s{i:03d}") for i in range(n)]


def random_graph(
    rng: np.random.Generator,
    max_states: int = 50,
    max_out: int = 3,
    absorb_prob: float = 0.7,
) -> InterpretationGraph:
    """Random integer-count chain where every state can reach absorption."""
    n = int(rng.integers(2, max_states + 1))
    keys = state_keys(n)
    edges: dict = {}
    for i, key in enumerate(keys):
        row: dict = {}
        out_deg = int(rng.integers(0, max_out + 1))
        if out_deg:
            for j in rng.choice(n, size=min(out_deg, n), replace=False):
                row[keys[int(j)]] = int(rng.integers(1, 10))
        if rng.random() < absorb_prob or not row:
            if rng.random() < 0.7:
                row[AbsorbingLabel.SUCCESS] = int(rng.integers(1, 10))
            if rng.random() < 0.5:
                row[AbsorbingLabel.FAILURE] = int(rng.integers(1, 10))
            if AbsorbingLabel.SUCCESS not in row and AbsorbingLabel.FAILURE not in row:
                row[AbsorbingLabel.SUCCESS] = 1
        edges[key] = row
    _ensure_absorbing_reachable(edges, keys)
    return InterpretationGraph(edges)


def _ensure_absorbing_reachable(edges: dict, keys) -> None:
    reached = {
        k for k in keys
        if any(isinstance(t, AbsorbingLabel) for t in edges.get(k, {}))
    }
    reverse = defaultdict(set)
    for src, row in edges.items():
        for tgt in row:
            if isinstance(tgt, InterpretationKey):
                reverse[tgt].add(src)
    frontier = list(reached)
    while frontier:
        cur = frontier.pop()
        for prev in reverse[cur]:
            if prev not in reached:
                reached.add(prev)
                frontier.append(prev)
    for k in keys:
        if k not in reached:
            edges.setdefault(k, {})[AbsorbingLabel.SUCCESS] = 1


def random_acyclic_graph(rng: np.random.Generator, max_states: int = 6) -> InterpretationGraph:
    """Forward-edge DAG whose longest transient path fits in five hops."""
    n = int(rng.integers(2, max_states + 1))
    keys = state_keys(n)
    edges: dict = {}
    for i, key in enumerate(keys):
        row: dict = {}
        later = list(range(i + 1, n))
        if later:
            take = int(rng.integers(0, min(2, len(later)) + 1))
            if take:
                for j in rng.choice(later, size=take, replace=False):
                    row[keys[int(j)]] = int(rng.integers(1, 10))
        if not row or rng.random() < 0.6:
            if rng.random() < 0.7:
                row[AbsorbingLabel.SUCCESS] = int(rng.integers(1, 10))
            if rng.random() < 0.5:
                row[AbsorbingLabel.FAILURE] = int(rng.integers(1, 10))
            if AbsorbingLabel.SUCCESS not in row and AbsorbingLabel.FAILURE not in row:
                row[AbsorbingLabel.SUCCESS] = 1
        edges[key] = row
    return InterpretationGraph(edges)


def random_q(
    rng: np.random.Generator,
    max_states: int = 50,
    min_absorb: float = 0.25,
) -> np.ndarray:
    """Random sub-stochastic matrix with per-row absorbing mass >= min_absorb.

    The contraction rate then bounds the tail of the 64-term power series
    well below the 1e-6 comparison tolerance.
    """
    n = int(rng.integers(1, max_states + 1))
    Q = np.zeros((n, n))
    for i in range(n):
        absorbing = min_absorb + (1.0 - min_absorb) * rng.random()
        k = int(rng.integers(0, min(n, 4) + 1))
        if k:
            cols = rng.choice(n, size=k, replace=False)
            weights = rng.random(k)
            Q[i, cols] = weights / weights.sum() * (1.0 - absorbing)
    return Q


def planted_world(
    n_pairs: int = 5,
    population: int = 80,
    sessions_per_user: int = 4,
    source_success: float = 0.0,
    target_success: float = 0.9,
    rephrase_prob: float = 0.7,
    interject_prob: float = 0.0,
):
    """World with n defective utterances whose users rephrase to a fix."""
    from remine.simulator import FailurePolicy, PlantedPair, UtteranceSpec, WorldSpec

    utterances = []
    planted = []
    for i in range(n_pairs):
        source = f"play broken song {i}"
        target = f"play fixed song {i}"
        utterances.append(
            UtteranceSpec(
                target,
                f"Music|PlayMusicIntent|SongName:fixed {i}",
                target_success,
                start_weight=1.0,
            )
        )
        utterances.append(
            UtteranceSpec(
                source,
                f"Music|PlayMusicIntent|SongName:broken {i}",
                source_success,
                start_weight=1.0,
                on_failure=FailurePolicy(
                    rephrase_prob=rephrase_prob,
                    interject_prob=interject_prob,
                    targets=((target, 1.0),),
                ),
            )
        )
        planted.append(PlantedPair(source, target))
    utterances.append(
        UtteranceSpec(
            "play a good song",
            "Music|PlayMusicIntent|SongName:good",
            1.0,
            start_weight=2.0,
        )
    )
    return WorldSpec(
        utterances=tuple(utterances),
        population=population,
        sessions_per_user=sessions_per_user,
        planted=tuple(planted),
    )


def all_success_world(population: int = 50, sessions_per_user: int = 2):
    from remine.simulator import UtteranceSpec, WorldSpec

    return WorldSpec(
        utterances=(
            UtteranceSpec("play a good song", "Music|PlayMusicIntent|SongName:good", 1.0, 1.0),
            UtteranceSpec("what time is it", "Global|TimeIntent", 1.0, 1.0),
        ),
        population=population,
        sessions_per_user=sessions_per_user,
    )


def assert_mc_matches_exact(graph, source, walks: int, seed: int) -> None:
    """Exact scores vs Monte Carlo estimates within 3-sigma binomial bounds."""
    vector = success_vector_exact(to_matrix(graph), source)
    estimates = monte_carlo_success(graph, source, walks, seed)
    for target in set(vector.entries) | set(estimates):
        exact = vector.value(target)
        estimate = estimates.get(target, 0.0)
        sigma = math.sqrt(max(exact * (1.0 - exact), 0.0) / walks)
        assert abs(estimate - exact) <= 3.0 * sigma + 1e-12, (
            f"target {target.serialize()}: exact {exact} vs mc {estimate} "
            f"(3 sigma = {3 * sigma})"
        )
