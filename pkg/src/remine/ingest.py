"""Log ingestion: parse raw utterance records, cut them into sessions, and
attach a terminal success/failure label from explicit and implicit feedback.

Input is line-delimited text, one event per line, tab-separated fields in
this order::

    customer_id  device_id  timestamp_ms  utterance  interpretation_key
    feedback_kind  feedback_detail  response_category

Fields must not contain tabs or newlines; unknown trailing fields are
ignored for forward compatibility.  ``feedback_kind`` is one of ``none``
(or empty), ``explicit_interjection``, ``implicit_failure``.  When the kind
is ``none``, feedback is derived by rule: an interpretation whose intent is
in the interjection set counts as an explicit interjection, and a response
category in the failure set counts as an implicit failure.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .normalize import normalize_utterance
from .states import AbsorbingLabel, InterpretationKey

log = logging.getLogger(__name__)

DEFAULT_GAP_MS = 45_000
DEFAULT_INTERJECTION_INTENTS = ("StopIntent", "CancelIntent")
DEFAULT_FAILURE_CATEGORIES = ("unsupported", "no-match", "exception")

EVENT_FIELDS = (
    "customer_id",
    "device_id",
    "timestamp_ms",
    "utterance",
    "interpretation_key",
    "feedback_kind",
    "feedback_detail",
    "response_category",
)


class IngestError(RuntimeError):
    """Fatal ingest failure (unreadable stream, unwritable output)."""


class FeedbackKind(Enum):
    NONE = "none"
    EXPLICIT_INTERJECTION = "explicit_interjection"
    IMPLICIT_FAILURE = "implicit_failure"


@dataclass(frozen=True)
class FeedbackSignal:
    kind: FeedbackKind = FeedbackKind.NONE
    detail: str | None = None


NO_FEEDBACK = FeedbackSignal()


@dataclass(frozen=True)
class UtteranceEvent:
    """One log record after parsing and normalization."""

    customer_id: str
    device_id: str
    timestamp_ms: int
    utterance: str
    interpretation: InterpretationKey | None
    feedback: FeedbackSignal = NO_FEEDBACK


@dataclass
class Session:
    """Time-delimited ordered run of one customer-device pair's events.

    ``label`` is ``None`` until :func:`finalize_session` has resolved the
    terminal feedback.
    """

    customer_id: str
    device_id: str
    events: list[UtteranceEvent]
    label: AbsorbingLabel | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.customer_id, self.device_id, self.start_ms)

    @property
    def start_ms(self) -> int:
        return self.events[0].timestamp_ms


@dataclass
class IngestStats:
    lines: int = 0
    parsed: int = 0
    skipped: int = 0
    duplicate_timestamps: int = 0
    raw_sessions: int = 0
    finalized_sessions: int = 0
    discarded_sessions: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(vars(self))


def _parse_line(
    line: str,
    interjection_intents: frozenset[str],
    failure_categories: frozenset[str],
) -> UtteranceEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < len(EVENT_FIELDS):
        raise ValueError(f"expected {len(EVENT_FIELDS)} fields, got {len(parts)}")
    customer, device, ts_raw, utterance_raw, interp_raw, kind_raw, detail, category = (
        parts[: len(EVENT_FIELDS)]
    )
    if not customer or not device:
        raise ValueError("empty customer or device id")
    timestamp = int(ts_raw)
    if timestamp < 0:
        raise ValueError(f"negative timestamp {timestamp}")
    utterance = normalize_utterance(utterance_raw)
    if not utterance:
        raise ValueError("utterance empty after normalization")
    interpretation = InterpretationKey.parse(interp_raw) if interp_raw else None

    kind_token = kind_raw.strip().lower() or "none"
    if kind_token == FeedbackKind.EXPLICIT_INTERJECTION.value:
        intent = interpretation.intent if interpretation else ""
        feedback = FeedbackSignal(FeedbackKind.EXPLICIT_INTERJECTION, detail or intent)
    elif interpretation is not None and interpretation.intent in interjection_intents:
        feedback = FeedbackSignal(FeedbackKind.EXPLICIT_INTERJECTION, interpretation.intent)
    elif kind_token == FeedbackKind.IMPLICIT_FAILURE.value:
        feedback = FeedbackSignal(FeedbackKind.IMPLICIT_FAILURE, detail or category or None)
    elif category in failure_categories:
        feedback = FeedbackSignal(FeedbackKind.IMPLICIT_FAILURE, category)
    elif kind_token == FeedbackKind.NONE.value:
        feedback = NO_FEEDBACK
    else:
        raise ValueError(f"unknown feedback kind {kind_raw!r}")
    return UtteranceEvent(customer, device, timestamp, utterance, interpretation, feedback)


def parse_events(
    lines: Iterable[str],
    *,
    interjection_intents: Sequence[str] = DEFAULT_INTERJECTION_INTENTS,
    failure_categories: Sequence[str] = DEFAULT_FAILURE_CATEGORIES,
) -> tuple[list[UtteranceEvent], int]:
    """Parse raw record lines in input order.

    Returns the parsed events plus the number of malformed lines that were
    skipped.  Malformed lines are logged per line and never fatal; blank
    lines are ignored entirely.
    """
    interjections = frozenset(interjection_intents)
    categories = frozenset(failure_categories)
    events: list[UtteranceEvent] = []
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            events.append(_parse_line(line, interjections, categories))
        except (ValueError, TypeError) as exc:
            skipped += 1
            log.warning("skipping malformed record at line %d: %s", lineno, exc)
    return events, skipped


def format_event_record(
    customer_id: str,
    device_id: str,
    timestamp_ms: int,
    utterance: str,
    interpretation_key: str,
    feedback_kind: str = "none",
    feedback_detail: str = "",
    response_category: str = "",
) -> str:
    """Render one input-format record line (without trailing newline)."""
    return "\t".join(
        (
            customer_id,
            device_id,
            str(int(timestamp_ms)),
            utterance,
            interpretation_key,
            feedback_kind,
            feedback_detail,
            response_category,
        )
    )


def sessionize(
    events: Sequence[UtteranceEvent],
    gap_ms: int = DEFAULT_GAP_MS,
    stats: IngestStats | None = None,
) -> list[Session]:
    """Partition events into sessions per (customer, device) key.

    Within a partition events are sorted by timestamp (stable, so duplicate
    timestamps keep input order) and a new session starts whenever the gap to
    the previous event exceeds ``gap_ms``; the boundary itself is inclusive.
    Returned sessions are unlabeled and interjections are not yet stripped.
    """
    if gap_ms <= 0:
        raise ValueError("gap_ms must be positive")
    partitions: dict[tuple[str, str], list[UtteranceEvent]] = defaultdict(list)
    for event in events:
        partitions[(event.customer_id, event.device_id)].append(event)

    sessions: list[Session] = []
    for customer, device in sorted(partitions):
        ordered = sorted(partitions[(customer, device)], key=lambda e: e.timestamp_ms)
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.timestamp_ms == cur.timestamp_ms:
                if stats is not None:
                    stats.duplicate_timestamps += 1
                log.warning(
                    "duplicate timestamp %d for (%s, %s); keeping both events",
                    cur.timestamp_ms,
                    customer,
                    device,
                )
        current: list[UtteranceEvent] = []
        for event in ordered:
            if current and event.timestamp_ms - current[-1].timestamp_ms > gap_ms:
                sessions.append(Session(customer, device, current))
                current = []
            current.append(event)
        if current:
            sessions.append(Session(customer, device, current))
    if stats is not None:
        stats.raw_sessions += len(sessions)
    return sessions


def finalize_session(raw: Session) -> Session | None:
    """Strip interjections and resolve the terminal label.

    Interjections before the final position are removed outright.  A
    terminal interjection is consumed into a failure label and dropped from
    the events; a terminal implicit failure labels the session failed but
    the event is retained.  Sessions left empty are discarded (``None``).
    """
    if not raw.events:
        return None
    last = len(raw.events) - 1
    kept = [
        e
        for i, e in enumerate(raw.events)
        if e.feedback.kind is not FeedbackKind.EXPLICIT_INTERJECTION or i == last
    ]
    if not kept:
        return None
    if kept[-1].feedback.kind is FeedbackKind.EXPLICIT_INTERJECTION:
        kept = kept[:-1]
        label = AbsorbingLabel.FAILURE
    elif kept[-1].feedback.kind is FeedbackKind.IMPLICIT_FAILURE:
        label = AbsorbingLabel.FAILURE
    else:
        label = AbsorbingLabel.SUCCESS
    if not kept:
        return None
    return Session(raw.customer_id, raw.device_id, kept, label)


def finalize_sessions(
    raw_sessions: Iterable[Session],
    stats: IngestStats | None = None,
) -> list[Session]:
    sessions = []
    discarded = 0
    for raw in raw_sessions:
        done = finalize_session(raw)
        if done is None:
            discarded += 1
        else:
            sessions.append(done)
    if stats is not None:
        stats.finalized_sessions += len(sessions)
        stats.discarded_sessions += discarded
    return sessions


def ingest_lines(
    lines: Iterable[str],
    *,
    gap_ms: int = DEFAULT_GAP_MS,
    interjection_intents: Sequence[str] = DEFAULT_INTERJECTION_INTENTS,
    failure_categories: Sequence[str] = DEFAULT_FAILURE_CATEGORIES,
) -> tuple[list[Session], IngestStats]:
    """Full ingest: parse, sessionize, finalize.  Returns labeled sessions."""
    stats = IngestStats()
    events, skipped = parse_events(
        lines,
        interjection_intents=interjection_intents,
        failure_categories=failure_categories,
    )
    stats.lines = len(events) + skipped
    stats.parsed = len(events)
    stats.skipped = skipped
    raw = sessionize(events, gap_ms, stats)
    sessions = finalize_sessions(raw, stats)
    return sessions, stats


def read_event_lines(path: str | Path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.readlines()
    except OSError as exc:
        raise IngestError(f"cannot read event log {path}: {exc}") from exc


def _event_to_dict(event: UtteranceEvent) -> dict:
    return {
        "timestamp_ms": event.timestamp_ms,
        "utterance": event.utterance,
        "interpretation": event.interpretation.serialize() if event.interpretation else "",
        "feedback_kind": event.feedback.kind.value,
        "feedback_detail": event.feedback.detail or "",
    }


def _event_from_dict(customer: str, device: str, payload: dict) -> UtteranceEvent:
    interp = payload.get("interpretation") or ""
    detail = payload.get("feedback_detail") or None
    return UtteranceEvent(
        customer,
        device,
        int(payload["timestamp_ms"]),
        payload["utterance"],
        InterpretationKey.parse(interp) if interp else None,
        FeedbackSignal(FeedbackKind(payload.get("feedback_kind", "none")), detail),
    )


def write_sessions(sessions: Iterable[Session], path: str | Path) -> None:
    """Serialize finalized sessions as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            record = {
                "customer_id": session.customer_id,
                "device_id": session.device_id,
                "label": session.label.value if session.label else None,
                "events": [_event_to_dict(e) for e in session.events],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_sessions(path: str | Path) -> list[Session]:
    sessions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            label = record.get("label")
            sessions.append(
                Session(
                    record["customer_id"],
                    record["device_id"],
                    [
                        _event_from_dict(record["customer_id"], record["device_id"], e)
                        for e in record["events"]
                    ],
                    AbsorbingLabel(label) if label else None,
                )
            )
    return sessions
