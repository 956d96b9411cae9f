"""The committed constraint state carried across turns.

A ledger is an immutable, insertion-ordered list of constraints with unique
canonical keys. Each entry remembers the turn it was committed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

from driftcheck.domains import Constraint, DomainSchema, validate_constraint


@dataclass(frozen=True)
class LedgerEntry:
    constraint: Constraint
    key: str
    source_turn: int


@dataclass(frozen=True)
class Ledger:
    entries: tuple[LedgerEntry, ...] = ()
    schema: DomainSchema | None = None

    def __post_init__(self) -> None:
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("ledger entries must have distinct canonical keys")
        turns = [e.source_turn for e in self.entries]
        if any(b < a for a, b in zip(turns, turns[1:])):
            raise ValueError("ledger source turns must be nondecreasing")

    @classmethod
    def empty(cls, schema: DomainSchema | None = None) -> Ledger:
        return cls((), schema)

    @property
    def keys(self) -> frozenset[str]:
        return frozenset(e.key for e in self.entries)

    @property
    def last_turn(self) -> int:
        return self.entries[-1].source_turn if self.entries else 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Constraint]:
        return (e.constraint for e in self.entries)

    def __contains__(self, c: object) -> bool:
        return isinstance(c, Constraint) and c.key in self.keys

    def to_json(self) -> list[dict[str, Any]]:
        return [e.constraint.to_json() for e in self.entries]

    @classmethod
    def from_json(cls, items: Sequence[dict[str, Any]], schema: DomainSchema | None = None) -> Ledger:
        out = cls.empty(schema)
        for item in items:
            c = Constraint.from_json(item)
            out = merge(out, [c], c.turn)
        return out


def merge(ledger: Ledger, new: Iterable[Constraint], turn: int) -> Ledger:
    """Return ``ledger`` extended by the constraints of ``new`` whose keys are unseen.

    Every constraint is validated against the ledger's schema (when it has
    one) before anything is added, so a bad constraint leaves no partial merge.
    """
    if turn < ledger.last_turn:
        raise ValueError(f"cannot merge at turn {turn}: ledger already holds turn {ledger.last_turn}")
    new = list(new)
    if ledger.schema is not None:
        for c in new:
            validate_constraint(c, ledger.schema)
    seen = set(ledger.keys)
    added = []
    for c in new:
        key = c.key
        if key in seen:
            continue
        seen.add(key)
        added.append(LedgerEntry(c.at_turn(turn), key, turn))
    if not added:
        return ledger
    return Ledger(ledger.entries + tuple(added), ledger.schema)


def active_constraints(ledger: Ledger) -> list[Constraint]:
    return [e.constraint for e in ledger.entries]


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def _line(entry: LedgerEntry) -> str:
    return f"[turn {entry.source_turn}] {entry.key}"


def serialize(ledger: Ledger, budget_tokens: int = 3000) -> str:
    """Render one ``[turn t] key`` line per entry, oldest first.

    When the rendering exceeds the budget the oldest entries collapse into a
    single ``[... N earlier constraints elided]`` line and the newest are kept.
    """
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be positive")
    lines = [_line(e) for e in ledger.entries]
    text = "\n".join(lines)
    if estimate_tokens(text) <= budget_tokens:
        return text
    # grow the kept suffix from the newest entry while it still fits
    kept: list[str] = []
    for i in range(len(lines) - 1, -1, -1):
        elided = i
        head = f"[... {elided} earlier constraints elided]"
        trial = "\n".join([head, lines[i], *kept])
        if estimate_tokens(trial) > budget_tokens:
            break
        kept.insert(0, lines[i])
    head = f"[... {len(lines) - len(kept)} earlier constraints elided]"
    return "\n".join([head, *kept])
