"""Synthetic session-corpus generator and replay-based defect evaluation.

Worlds are described by a JSON config: an utterance inventory with its
interpretation mapping and per-utterance success probability, per-utterance
failure policies (rephrase / interject / abandon), a population size, and a
time model whose gaps are chosen so that sessionization at the default
45-second threshold reconstructs the generated session boundaries exactly.

Generation is deterministic for a fixed seed, with an independent generator
per simulated user so users could be generated in parallel.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import (
    DEFAULT_GAP_MS,
    FeedbackKind,
    UtteranceEvent,
    finalize_sessions,
    format_event_record,
    parse_events,
    read_event_lines,
    sessionize,
)
from .rewrite_miner import FrictionStats, RewriteTable
from .states import AbsorbingLabel

log = logging.getLogger(__name__)

SUCCESS_CATEGORY = "ok"
FAILURE_CATEGORY = "no-match"
INTERJECTION_UTTERANCE = "stop"
INTERJECTION_KEY = "Global|StopIntent"


class WorldSpecError(ValueError):
    """Raised when a world config is inconsistent."""


@dataclass(frozen=True)
class FailurePolicy:
    """What a user does after a failed turn; the remainder abandons."""

    rephrase_prob: float = 0.0
    interject_prob: float = 0.0
    targets: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class UtteranceSpec:
    text: str
    interpretation: str
    success_prob: float
    start_weight: float = 0.0
    on_failure: FailurePolicy | None = None


@dataclass(frozen=True)
class PlantedPair:
    source: str
    target: str


@dataclass(frozen=True)
class WorldSpec:
    utterances: tuple[UtteranceSpec, ...]
    population: int = 10
    sessions_per_user: int = 1
    base_time_ms: int = 1_600_000_000_000
    turn_gap_ms: tuple[int, int] = (2_000, 8_000)
    session_gap_ms: int = 120_000
    max_turns: int = 6
    planted: tuple[PlantedPair, ...] = ()

    def inventory(self) -> dict[str, UtteranceSpec]:
        return {u.text: u for u in self.utterances}

    def validate(self) -> None:
        if self.population < 1 or self.sessions_per_user < 1 or self.max_turns < 1:
            raise WorldSpecError("population, sessions_per_user, max_turns must be >= 1")
        if len(self.turn_gap_ms) != 2:
            raise WorldSpecError("turn_gap_ms must be a [lo, hi] pair")
        lo, hi = self.turn_gap_ms
        if not (0 < lo <= hi):
            raise WorldSpecError("turn_gap_ms must satisfy 0 < lo <= hi")
        if hi > DEFAULT_GAP_MS:
            raise WorldSpecError(
                f"turn gaps up to {hi} ms would split sessions at the "
                f"{DEFAULT_GAP_MS} ms threshold"
            )
        if self.session_gap_ms <= DEFAULT_GAP_MS:
            raise WorldSpecError("session_gap_ms must exceed the session threshold")
        if not self.utterances:
            raise WorldSpecError("utterance inventory is empty")
        inventory = self.inventory()
        if len(inventory) != len(self.utterances):
            raise WorldSpecError("duplicate utterance text in inventory")
        if not any(u.start_weight > 0 for u in self.utterances):
            raise WorldSpecError("no utterance has a positive start weight")
        for u in self.utterances:
            if not 0.0 <= u.success_prob <= 1.0:
                raise WorldSpecError(f"success_prob out of range for {u.text!r}")
            if u.start_weight < 0:
                raise WorldSpecError(f"negative start weight for {u.text!r}")
            policy = u.on_failure
            if policy is None:
                continue
            if not 0.0 <= policy.rephrase_prob <= 1.0 or not 0.0 <= policy.interject_prob <= 1.0:
                raise WorldSpecError(f"failure policy out of range for {u.text!r}")
            if policy.rephrase_prob + policy.interject_prob > 1.0 + 1e-9:
                raise WorldSpecError(f"failure policy exceeds 1 for {u.text!r}")
            if policy.rephrase_prob > 0:
                if not policy.targets:
                    raise WorldSpecError(f"rephrase policy without targets for {u.text!r}")
                total = sum(w for _, w in policy.targets)
                if abs(total - 1.0) > 1e-9:
                    raise WorldSpecError(f"rephrase targets of {u.text!r} sum to {total}")
                for target, _ in policy.targets:
                    if target not in inventory:
                        raise WorldSpecError(f"rephrase target {target!r} not in inventory")
        for pair in self.planted:
            if pair.source not in inventory or pair.target not in inventory:
                raise WorldSpecError(f"planted pair {pair} not in inventory")


@dataclass(frozen=True)
class GroundTruthPair:
    source: str
    target: str
    source_success: float
    target_success: float
    rephrase_prob: float


@dataclass(frozen=True)
class GroundTruth:
    pairs: tuple[GroundTruthPair, ...]

    def as_dict(self) -> dict:
        return {"pairs": [vars(p) for p in self.pairs]}


def parse_world(payload: dict) -> WorldSpec:
    try:
        utterances = []
        for item in payload["utterances"]:
            policy = None
            raw_policy = item.get("on_failure")
            if raw_policy is not None:
                policy = FailurePolicy(
                    rephrase_prob=float(raw_policy.get("rephrase_prob", 0.0)),
                    interject_prob=float(raw_policy.get("interject_prob", 0.0)),
                    targets=tuple(
                        sorted((str(t), float(w)) for t, w in raw_policy.get("targets", {}).items())
                    ),
                )
            utterances.append(
                UtteranceSpec(
                    text=str(item["text"]),
                    interpretation=str(item["interpretation"]),
                    success_prob=float(item["success_prob"]),
                    start_weight=float(item.get("start_weight", 0.0)),
                    on_failure=policy,
                )
            )
        spec = WorldSpec(
            utterances=tuple(utterances),
            population=int(payload.get("population", 10)),
            sessions_per_user=int(payload.get("sessions_per_user", 1)),
            base_time_ms=int(payload.get("base_time_ms", 1_600_000_000_000)),
            turn_gap_ms=tuple(payload.get("turn_gap_ms", (2_000, 8_000))),  # type: ignore[arg-type]
            session_gap_ms=int(payload.get("session_gap_ms", 120_000)),
            max_turns=int(payload.get("max_turns", 6)),
            planted=tuple(
                PlantedPair(str(p["source"]), str(p["target"]))
                for p in payload.get("planted", ())
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WorldSpecError(f"malformed world config: {exc}") from exc
    spec.validate()
    return spec


def load_world(path: str | Path) -> WorldSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WorldSpecError(f"{path}: not valid JSON: {exc}") from exc
    return parse_world(payload)


def world_to_dict(spec: WorldSpec) -> dict:
    return {
        "population": spec.population,
        "sessions_per_user": spec.sessions_per_user,
        "base_time_ms": spec.base_time_ms,
        "turn_gap_ms": list(spec.turn_gap_ms),
        "session_gap_ms": spec.session_gap_ms,
        "max_turns": spec.max_turns,
        "utterances": [
            {
                "text": u.text,
                "interpretation": u.interpretation,
                "success_prob": u.success_prob,
                "start_weight": u.start_weight,
                **(
                    {
                        "on_failure": {
                            "rephrase_prob": u.on_failure.rephrase_prob,
                            "interject_prob": u.on_failure.interject_prob,
                            "targets": dict(u.on_failure.targets),
                        }
                    }
                    if u.on_failure is not None
                    else {}
                ),
            }
            for u in spec.utterances
        ],
        "planted": [{"source": p.source, "target": p.target} for p in spec.planted],
    }


def _weighted_pick(rng: np.random.Generator, items: Sequence[str], weights: Sequence[float]) -> str:
    cum = np.cumsum(weights)
    draw = rng.random() * cum[-1]
    return items[int(np.searchsorted(cum, draw, side="right").clip(max=len(items) - 1))]


def _user_lines(spec: WorldSpec, seed: int, user_idx: int) -> list[str]:
    rng = np.random.default_rng([int(seed), user_idx])
    inventory = spec.inventory()
    starters = [u.text for u in spec.utterances if u.start_weight > 0]
    weights = [inventory[t].start_weight for t in starters]
    customer = f"u{user_idx:06d}"
    device = "d0"
    lo, hi = spec.turn_gap_ms
    t = spec.base_time_ms + user_idx * 7_919  # small fixed stagger between users

    def turn_gap() -> int:
        return int(rng.integers(lo, hi + 1))

    lines: list[str] = []
    for _ in range(spec.sessions_per_user):
        utterance = _weighted_pick(rng, starters, weights)
        turns = 0
        while True:
            turns += 1
            entry = inventory[utterance]
            succeeded = rng.random() < entry.success_prob
            if succeeded:
                lines.append(
                    format_event_record(
                        customer, device, t, utterance, entry.interpretation,
                        response_category=SUCCESS_CATEGORY,
                    )
                )
                t += turn_gap()
                break
            lines.append(
                format_event_record(
                    customer, device, t, utterance, entry.interpretation,
                    response_category=FAILURE_CATEGORY,
                )
            )
            t += turn_gap()
            policy = entry.on_failure or FailurePolicy()
            roll = rng.random()
            if roll < policy.interject_prob:
                lines.append(
                    format_event_record(
                        customer, device, t, INTERJECTION_UTTERANCE, INTERJECTION_KEY,
                        feedback_kind=FeedbackKind.EXPLICIT_INTERJECTION.value,
                        feedback_detail="StopIntent",
                        response_category=SUCCESS_CATEGORY,
                    )
                )
                t += turn_gap()
                break
            if roll < policy.interject_prob + policy.rephrase_prob and turns < spec.max_turns:
                targets = [name for name, _ in policy.targets]
                target_weights = [w for _, w in policy.targets]
                utterance = _weighted_pick(rng, targets, target_weights)
                continue
            break
        t += spec.session_gap_ms
    return lines


def generate_lines(spec: WorldSpec, seed: int) -> tuple[list[str], GroundTruth]:
    """Render the event log for a world; deterministic for a fixed seed."""
    spec.validate()
    lines: list[str] = []
    for user_idx in range(spec.population):
        lines.extend(_user_lines(spec, seed, user_idx))
    inventory = spec.inventory()
    pairs = []
    for pair in spec.planted:
        policy = inventory[pair.source].on_failure or FailurePolicy()
        pairs.append(
            GroundTruthPair(
                source=pair.source,
                target=pair.target,
                source_success=inventory[pair.source].success_prob,
                target_success=inventory[pair.target].success_prob,
                rephrase_prob=policy.rephrase_prob,
            )
        )
    return lines, GroundTruth(tuple(pairs))


def generate(spec: WorldSpec, seed: int, out_path: str | Path) -> GroundTruth:
    """Write the event log plus a ``<out>.truth.json`` sidecar."""
    lines, truth = generate_lines(spec, seed)
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    with open(out_path.with_suffix(out_path.suffix + ".truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth.as_dict(), fh, indent=2, sort_keys=True)
    return truth


def _event_failed(event: UtteranceEvent) -> bool:
    return event.feedback.kind is not FeedbackKind.NONE


def observed_friction_stats(events: Iterable[UtteranceEvent]) -> FrictionStats:
    """Per-utterance serve telemetry from a log: (defective, total) counts."""
    total: Counter[str] = Counter()
    defective: Counter[str] = Counter()
    for event in events:
        total[event.utterance] += 1
        if _event_failed(event):
            defective[event.utterance] += 1
    return FrictionStats({u: (defective[u], total[u]) for u in total})


def win_loss_ratio(
    candidates: Sequence,
    stats: FrictionStats,
    p_threshold: float = 0.01,
) -> tuple[int, int]:
    """Count rewrites whose arm is significantly better (wins) or worse
    (losses) than serving the original utterance, at the given one-sided
    significance level.  Returns (wins, losses)."""
    from .rewrite_miner import two_proportion_z

    wins = losses = 0
    for candidate in candidates:
        rewrite_defective, rewrite_total = stats.get(candidate.target)
        original_defective, original_total = stats.get(candidate.source)
        if rewrite_total == 0 or original_total == 0:
            continue
        _, p_worse = two_proportion_z(
            rewrite_defective, rewrite_total, original_defective, original_total
        )
        _, p_better = two_proportion_z(
            original_defective, original_total, rewrite_defective, rewrite_total
        )
        if p_worse < p_threshold:
            losses += 1
        elif p_better < p_threshold:
            wins += 1
    return wins, losses


def _success_probs(
    events: Sequence[UtteranceEvent], world: WorldSpec | None
) -> dict[str, float]:
    if world is not None:
        return {u.text: u.success_prob for u in world.utterances}
    stats = observed_friction_stats(events)
    return {
        utterance: 1.0 - bad / total
        for utterance, (bad, total) in stats.counts.items()
        if total > 0
    }


def evaluate_defect_rate(
    events_or_path: str | Path | Sequence[str],
    table: RewriteTable | None = None,
    *,
    world: WorldSpec | None = None,
    seed: int = 0,
    gap_ms: int = DEFAULT_GAP_MS,
) -> float:
    """Replay a log with rewrites applied at lookup time; return the defect rate.

    Turns that the table leaves untouched keep their logged outcome, so an
    empty (or absent) table reproduces the log's own defect rate exactly.  A
    rewritten turn draws a fresh outcome from the target's success
    probability: the world's true probability when a world spec is given,
    otherwise the per-utterance rate observed in the log itself.
    Deterministic for a fixed seed.
    """
    if isinstance(events_or_path, (str, Path)):
        lines: Sequence[str] = read_event_lines(events_or_path)
    else:
        lines = events_or_path
    events, _ = parse_events(lines)
    sessions = finalize_sessions(sessionize(events, gap_ms))
    if not sessions:
        return 0.0

    entries = table.entries if table is not None else {}
    if not entries:
        failures = sum(1 for s in sessions if s.label is AbsorbingLabel.FAILURE)
        return failures / len(sessions)

    success_probs = _success_probs(events, world)
    rng = np.random.default_rng(int(seed))
    defects = 0
    for session in sessions:
        succeeded = False
        for event in session.events:
            candidate = entries.get(event.utterance)
            if candidate is not None and candidate.target != event.utterance:
                outcome = rng.random() < success_probs.get(candidate.target, 0.0)
            else:
                outcome = not _event_failed(event)
            if outcome:
                succeeded = True
                break
        if not succeeded:
            defects += 1
    return defects / len(sessions)
