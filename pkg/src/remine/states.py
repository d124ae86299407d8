"""State vocabulary of the reformulation chain.

Transient states are structured NLU interpretations (domain, intent, named
slots); the two absorbing states are the terminal outcomes injected at the
end of every session.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

SUCCESS_TOKEN = "__success__"
FAILURE_TOKEN = "__failure__"

# Tokens never contain '|', so they can share a column with serialized keys.
_FORBIDDEN_CHARS = ("|", "\t", "\n", "\r")


class AbsorbingLabel(enum.Enum):
    """Terminal session outcome."""

    SUCCESS = "success"
    FAILURE = "failure"

    @property
    def token(self) -> str:
        return SUCCESS_TOKEN if self is AbsorbingLabel.SUCCESS else FAILURE_TOKEN

    @classmethod
    def from_token(cls, token: str) -> "AbsorbingLabel":
        if token == SUCCESS_TOKEN:
            return cls.SUCCESS
        if token == FAILURE_TOKEN:
            return cls.FAILURE
        raise ValueError(f"not an absorbing-state token: {token!r}")


def _check_part(part: str, what: str) -> None:
    if not part:
        raise ValueError(f"interpretation key {what} must be non-empty")
    for ch in _FORBIDDEN_CHARS:
        if ch in part:
            raise ValueError(f"interpretation key {what} contains {ch!r}: {part!r}")


@dataclass(frozen=True)
class InterpretationKey:
    """Structured interpretation of one utterance.

    Slots are stored sorted by slot name, so two keys are equal exactly when
    their serialized forms (``domain|intent|slot:value|...``) are equal.
    Slot values may contain ``:`` but none of the reserved characters.
    """

    domain: str
    intent: str
    slots: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        _check_part(self.domain, "domain")
        _check_part(self.intent, "intent")
        normalized = []
        for name, value in self.slots:
            _check_part(name, "slot name")
            if ":" in name:
                raise ValueError(f"slot name contains ':': {name!r}")
            for ch in _FORBIDDEN_CHARS:
                if ch in value:
                    raise ValueError(f"slot value contains {ch!r}: {value!r}")
            normalized.append((name, value))
        object.__setattr__(self, "slots", tuple(sorted(normalized)))

    def serialize(self) -> str:
        parts = [self.domain, self.intent]
        parts.extend(f"{name}:{value}" for name, value in self.slots)
        return "|".join(parts)

    @classmethod
    def parse(cls, text: str) -> "InterpretationKey":
        parts = text.split("|")
        if len(parts) < 2:
            raise ValueError(f"malformed interpretation key: {text!r}")
        slots = []
        for raw in parts[2:]:
            name, sep, value = raw.partition(":")
            if not sep:
                raise ValueError(f"malformed slot {raw!r} in key {text!r}")
            slots.append((name, value))
        return cls(parts[0], parts[1], tuple(slots))

    def __lt__(self, other: "InterpretationKey") -> bool:
        return self.serialize() < other.serialize()

    def __str__(self) -> str:
        return self.serialize()


# Events whose NLU output is missing are projected onto this reserved state.
UNPARSED_KEY = InterpretationKey("__unparsed__", "__unparsed__")
