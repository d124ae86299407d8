"""Acceptance criteria, one test per criterion, each printing a pass/fail
line and enforcing its stated tolerance and runtime budget."""

from __future__ import annotations

import math
import threading
import time

import numpy as np

from helpers import (
    H0,
    H1,
    H2,
    album_lines,
    all_success_world,
    assert_mc_matches_exact,
    planted_world,
    random_acyclic_graph,
    random_graph,
    random_q,
)
from remine import (
    AbsorbingLabel,
    FrictionStats,
    ReformulationMiner,
    RewriteCandidate,
    RewriteService,
    SolveConfig,
    best_target,
    blacklist_filter,
    build_graph,
    build_table,
    fundamental_matrix,
    ingest_lines,
    parse_events,
    project,
    solve_all,
    success_vector_bfs,
    success_vector_exact,
    to_matrix,
    two_proportion_z,
)
from remine.rewrite_miner import RunProvenance, export_table
from remine.simulator import evaluate_defect_rate, generate_lines, observed_friction_stats


class _Criterion:
    """Context manager that prints the pass/fail line and checks the budget."""

    def __init__(self, number: int, description: str, budget_s: float | None = None):
        self.number = number
        self.description = description
        self.budget_s = budget_s

    def __enter__(self):
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.started
        status = "PASS" if exc_type is None else "FAIL"
        print(f"ACCEPTANCE {self.number} {status} ({elapsed:.2f}s): {self.description}",
              flush=True)
        if exc_type is None and self.budget_s is not None:
            assert elapsed < self.budget_s, (
                f"criterion {self.number} exceeded its {self.budget_s}s budget: {elapsed:.2f}s"
            )
        return False


def test_criterion_1_worked_example_reproduction():
    with _Criterion(1, "worked-example fixture: Z0, P(h1|h0), best target", 1.0):
        sessions, stats = ingest_lines(album_lines())
        assert stats.parsed == 9 and stats.skipped == 0
        latents, _ = project(sessions)
        graph = build_graph(latents)
        assert graph.row_total(H0) == 4
        assert graph.transition_prob(H0, H1) == 0.25
        vector = success_vector_exact(to_matrix(graph), H0)
        target, score = best_target(vector)
        assert target == H2
        assert abs(score - 2 / 3) <= 1e-9
        assert vector.own_success == 0.0


def test_criterion_2_fundamental_matrix_on_random_chains():
    with _Criterion(2, "fundamental matrix residual and 64-term power series", 30.0):
        rng = np.random.default_rng(202)
        for _ in range(200):
            Q = random_q(rng, max_states=50, min_absorb=0.25)
            n = Q.shape[0]
            N = fundamental_matrix(Q)
            residual = np.max(np.abs((np.eye(n) - Q) @ N - np.eye(n)))
            assert residual < 1e-9
            partial = np.eye(n)
            power = np.eye(n)
            for _k in range(64):
                power = power @ Q
                partial = partial + power
            assert np.max(np.abs(N - partial)) < 1e-6


def test_criterion_3_monte_carlo_oracle_agreement():
    with _Criterion(3, "exact scores vs 1e5-walk Monte Carlo within 3 sigma", 60.0):
        rng = np.random.default_rng(303)
        for i in range(20):
            graph = random_graph(rng, max_states=30)
            source = graph.states[int(rng.integers(len(graph.states)))]
            assert_mc_matches_exact(graph, source, walks=100_000, seed=1_000 + i)


def test_criterion_4_bfs_approximation_soundness():
    with _Criterion(4, "bounded-depth solve is a lower bound; exact on shallow DAGs", 30.0):
        rng = np.random.default_rng(404)
        cfg = SolveConfig(method="bfs")
        for _ in range(40):
            graph = random_graph(rng, max_states=50)
            exact_all = solve_all(graph)
            for source in graph.states[: min(6, len(graph.states))]:
                approx = success_vector_bfs(graph, source, cfg)
                exact = exact_all[source]
                for key, value in approx.entries.items():
                    assert value <= exact.value(key) + 1e-9
        exact_cfg = SolveConfig(method="bfs", prune_epsilon=0.0)
        for _ in range(40):
            graph = random_acyclic_graph(rng, max_states=6)
            exact_all = solve_all(graph)
            for source in graph.states:
                approx = success_vector_bfs(graph, source, exact_cfg)
                exact = exact_all[source]
                for key in set(approx.entries) | set(exact.entries):
                    assert abs(approx.value(key) - exact.value(key)) <= 1e-9


def test_criterion_5_blacklist_z_test():
    with _Criterion(5, "two-proportion z-test against an independent normal oracle"):
        def oracle(rd, rt, od, ot):
            pooled = (rd + od) / (rt + ot)
            se = math.sqrt(pooled * (1 - pooled) * (1 / rt + 1 / ot))
            z = (rd / rt - od / ot) / se
            return z, 0.5 * math.erfc(z / math.sqrt(2))

        worse = RewriteCandidate("orig", "worse", 0.5, 10, 1)
        better = RewriteCandidate("orig", "better", 0.5, 10, 1)
        equal = RewriteCandidate("orig", "same-rate", 0.5, 10, 1)
        stats = FrictionStats({
            "orig": (10, 100),
            "worse": (30, 100),
            "better": (3, 100),
            "same-rate": (10, 100),
        })
        passed, report = blacklist_filter([worse, better, equal], stats, p_threshold=0.01)
        by_target = {d.candidate.target: d for d in report}

        z_oracle, p_oracle = oracle(30, 100, 10, 100)
        assert by_target["worse"].rejected
        assert by_target["worse"].p < 0.01
        assert abs(by_target["worse"].z - z_oracle) < 1e-6
        assert abs(by_target["worse"].p - p_oracle) < 1e-6

        z_impl, p_impl = two_proportion_z(3, 100, 10, 100)
        z_oracle, p_oracle = oracle(3, 100, 10, 100)
        assert abs(z_impl - z_oracle) < 1e-6 and abs(p_impl - p_oracle) < 1e-6
        assert not by_target["better"].rejected

        assert not by_target["same-rate"].rejected
        assert by_target["same-rate"].z == 0.0
        assert abs(by_target["same-rate"].p - 0.5) < 1e-6

        assert [c.target for c in passed] == ["better", "same-rate"]


def test_criterion_6_end_to_end_recovery():
    with _Criterion(6, "planted pairs recovered and replay matches closed form", 120.0):
        spec = planted_world(n_pairs=5, population=80, sessions_per_user=4)
        lines, truth = generate_lines(spec, seed=606)
        events, _ = parse_events(lines)
        friction = observed_friction_stats(events)

        miner = ReformulationMiner(min_support=5).fit(
            lines, friction_stats=friction, mined_at=1_700_000_000_000
        )
        mined = {(c.source, c.target) for c in miner.table_.entries.values()}
        planted = {(p.source, p.target) for p in truth.pairs}
        assert mined == planted, f"mined {mined} != planted {planted}"
        assert not any(d.rejected for d in miner.blacklist_report_)

        # no-harm world: nothing to mine
        harmless_lines, _ = generate_lines(all_success_world(), seed=607)
        harmless = ReformulationMiner(min_support=5).fit(harmless_lines, mined_at=1)
        assert harmless.table_.entries == {}

        # replay: defect reduction matches the closed form within 3 sigma
        sessions, _ = ingest_lines(lines)
        sources = {p.source for p in truth.pairs}
        retry_fail = 1.0 - 0.9  # planted targets succeed with probability 0.9
        k_rescuable = sum(
            1
            for s in sessions
            if s.events[0].utterance in sources and s.label is AbsorbingLabel.FAILURE
        )
        other_defects = sum(
            1
            for s in sessions
            if s.events[0].utterance not in sources and s.label is AbsorbingLabel.FAILURE
        )
        total = len(sessions)
        baseline = evaluate_defect_rate(lines, None)
        replayed = evaluate_defect_rate(lines, miner.table_, world=spec, seed=616)
        expected = (retry_fail * k_rescuable + other_defects) / total
        sigma = math.sqrt(k_rescuable * retry_fail * (1 - retry_fail)) / total
        assert abs(replayed - expected) <= 3 * sigma + 1e-12
        assert replayed < baseline
        expected_reduction = (1 - retry_fail) * k_rescuable / total
        assert abs((baseline - replayed) - expected_reduction) <= 3 * sigma + 1e-12


def test_criterion_7_service_contract_under_concurrency(tmp_path):
    with _Criterion(7, "lookup/disable/reload contract; no errors or mixed versions"):
        def table_file(name, target, mined_at):
            path = tmp_path / name
            table = build_table(
                [RewriteCandidate("play babe shark", target, 0.5, 1, mined_at)],
                RunProvenance.build({"v": name}, name, mined_at),
            )
            export_table(table, path)
            return path

        v1 = table_file("v1.tsv", "play baby shark", 1)
        v2 = table_file("v2.tsv", "play the baby shark song", 2)
        service = RewriteService.from_file(v1)

        # contract: hit, miss, disable, reload
        assert service.lookup("play babe shark").decision == "rewrite"
        assert service.lookup("play unknown").decision == "pass_through"
        service.set_disabled(True)
        assert service.lookup("play babe shark").decision == "pass_through"
        service.set_disabled(False)
        version_1 = service.table_version
        version_2 = service.reload(v2)
        assert version_2 != version_1
        assert service.lookup("play babe shark").target == "play the baby shark song"
        service.reload(v1)

        expected_targets = {version_1: "play baby shark",
                            version_2: "play the baby shark song"}
        errors: list = []
        seen_versions: set[str] = set()
        stop = threading.Event()
        started = threading.Barrier(9)

        def reader():
            try:
                started.wait()
                while not stop.is_set():
                    response = service.lookup("play babe shark")
                    expected = expected_targets.get(response.table_version)
                    if expected is None or response.decision != "rewrite":
                        errors.append(("bad response", response))
                    elif response.target != expected:
                        errors.append(("mixed version", response))
                    seen_versions.add(response.table_version)
                    time.sleep(0)  # yield so the reloading thread is never starved
            except Exception as exc:  # noqa: BLE001 - the harness counts any error
                errors.append(("exception", exc))

        threads = [threading.Thread(target=reader) for _ in range(8)]
        for t in threads:
            t.start()
        started.wait()
        for i in range(100):
            service.reload(v2 if i % 2 == 0 else v1)
        stop.set()
        for t in threads:
            t.join()
        assert errors == []
        assert seen_versions == set(expected_targets)


def test_criterion_8_production_metrics_out_of_scope():
    with _Criterion(8, "production metrics substituted by fixture/property/simulation checks"):
        print(
            "ACCEPTANCE 8 NOTE: live-traffic results (93.4% annotated accuracy, "
            "12.0/11.8 win/loss, >30% defect reduction) require proprietary "
            "3-month logs and human annotation; criteria 1-7 are the desk-scale "
            "substitutes.",
            flush=True,
        )
