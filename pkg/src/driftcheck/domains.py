"""Domain schemas, constraint vocabularies, assignments and direct semantics.

Three domains are supported:

* ``logic_grid``: four people, three categories of four ordered values each.
  Within a category the values form a bijection onto the people.
* ``scheduling``: five to seven events placed on integer slots ``1..S`` with a
  duration in ``1..max_duration``; an event occupies ``[start, start+dur-1]``.
* ``seating``: six to eight people on ``P`` numbered seats around a round
  table (wrapping) or a rectangular table (two rows of ``P/2``, no wrap).

Constraints are immutable values. Symmetric variants keep their two entity
arguments sorted case-insensitively so that argument order never matters.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence


class ConstraintError(ValueError):
    """A constraint or schema failed validation."""


class IncompleteAssignmentError(ValueError):
    """An operation that needs a complete assignment received a partial one."""


class DomainKind(str, enum.Enum):
    LOGIC_GRID = "logic_grid"
    SCHEDULING = "scheduling"
    SEATING = "seating"

    def __str__(self) -> str:
        return self.value


# argument kinds: entity, category, value, slot, duration, seat, distance
VOCABULARY: dict[DomainKind, dict[str, tuple[str, ...]]] = {
    DomainKind.LOGIC_GRID: {
        "eq_value": ("entity", "category", "value"),
        "neq_value": ("entity", "category", "value"),
        "neq_attr": ("entity", "entity", "category"),
        "lt_attr": ("entity", "entity", "category"),
    },
    DomainKind.SCHEDULING: {
        "at_slot": ("entity", "slot"),
        "not_at_slot": ("entity", "slot"),
        "same_slot": ("entity", "entity"),
        "not_simultaneous": ("entity", "entity"),
        "duration_eq": ("entity", "duration"),
        "start_between": ("entity", "slot", "slot"),
    },
    DomainKind.SEATING: {
        "at_position": ("entity", "seat"),
        "not_at_position": ("entity", "seat"),
        "adjacent": ("entity", "entity"),
        "not_adjacent": ("entity", "entity"),
        "min_separation": ("entity", "entity", "distance"),
        "opposite": ("entity", "entity"),
        "left_of": ("entity", "entity"),
    },
}

SYMMETRIC = frozenset(
    {"neq_attr", "same_slot", "not_simultaneous", "adjacent", "not_adjacent", "min_separation", "opposite"}
)

VARIANT_DOMAIN: dict[str, DomainKind] = {
    variant: kind for kind, variants in VOCABULARY.items() for variant in variants
}

_INT_KINDS = frozenset({"slot", "duration", "seat", "distance"})


@dataclass(frozen=True)
class DomainSchema:
    """Structural description of one problem instance.

    Only the fields relevant to ``kind`` are populated; use the
    ``logic_grid``/``scheduling``/``seating`` constructors.
    """

    kind: DomainKind
    entities: tuple[str, ...]
    categories: tuple[tuple[str, tuple[str, ...]], ...] = ()
    slots: int = 0
    max_duration: int = 0
    shape: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DomainKind(self.kind))
        object.__setattr__(self, "entities", tuple(self.entities))
        n = len(self.entities)
        if len(set(self.entities)) != n or len({e.lower() for e in self.entities}) != n:
            raise ConstraintError(f"entity names must be unique: {self.entities}")
        if self.kind is DomainKind.LOGIC_GRID:
            if n != 4:
                raise ConstraintError(f"logic_grid needs exactly 4 entities, got {n}")
            if len(self.categories) != 3:
                raise ConstraintError("logic_grid needs exactly 3 categories")
            names = [c for c, _ in self.categories]
            if len(set(names)) != 3:
                raise ConstraintError(f"category names must be unique: {names}")
            for cat, values in self.categories:
                if len(values) != 4 or len(set(values)) != 4:
                    raise ConstraintError(f"category {cat!r} needs 4 distinct values")
        elif self.kind is DomainKind.SCHEDULING:
            if not 5 <= n <= 7:
                raise ConstraintError(f"scheduling needs 5-7 events, got {n}")
            if self.slots < 1 or not 1 <= self.max_duration <= self.slots:
                raise ConstraintError("scheduling needs slots >= 1 and 1 <= max_duration <= slots")
        else:
            if not 6 <= n <= 8:
                raise ConstraintError(f"seating needs 6-8 participants, got {n}")
            if self.shape not in ("round", "rectangular"):
                raise ConstraintError(f"unknown table shape {self.shape!r}")
            if self.shape == "rectangular" and n % 2:
                raise ConstraintError("rectangular tables need an even seat count")

    @classmethod
    def logic_grid(cls, entities: Sequence[str], categories: Mapping[str, Sequence[str]]) -> DomainSchema:
        cats = tuple((name, tuple(values)) for name, values in categories.items())
        return cls(DomainKind.LOGIC_GRID, tuple(entities), categories=cats)

    @classmethod
    def scheduling(cls, events: Sequence[str], slots: int = 10, max_duration: int = 3) -> DomainSchema:
        return cls(DomainKind.SCHEDULING, tuple(events), slots=slots, max_duration=max_duration)

    @classmethod
    def seating(cls, people: Sequence[str], shape: str = "round") -> DomainSchema:
        return cls(DomainKind.SEATING, tuple(people), shape=shape)

    @property
    def seats(self) -> int:
        return len(self.entities) if self.kind is DomainKind.SEATING else 0

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.categories)

    def category_values(self, category: str) -> tuple[str, ...]:
        for name, values in self.categories:
            if name == category:
                return values
        raise KeyError(category)

    @property
    def max_distance(self) -> int:
        """Largest seat distance realisable on this table."""
        p = self.seats
        return p // 2 if self.shape == "round" else p - 1

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "entities": list(self.entities)}
        if self.kind is DomainKind.LOGIC_GRID:
            # a list, not an object: category order is significant and must survive sort_keys
            out["categories"] = [[name, list(values)] for name, values in self.categories]
        elif self.kind is DomainKind.SCHEDULING:
            out["slots"] = self.slots
            out["max_duration"] = self.max_duration
        else:
            out["seats"] = self.seats
            out["shape"] = self.shape
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> DomainSchema:
        kind = DomainKind(obj["kind"])
        if kind is DomainKind.LOGIC_GRID:
            cats = obj["categories"]
            return cls.logic_grid(obj["entities"], dict(cats.items() if isinstance(cats, Mapping) else cats))
        if kind is DomainKind.SCHEDULING:
            return cls.scheduling(obj["entities"], obj["slots"], obj["max_duration"])
        return cls.seating(obj["entities"], obj["shape"])


def _sort_key(arg: Any) -> str:
    return str(arg).lower()


@dataclass(frozen=True)
class Constraint:
    """One typed atom. ``turn`` is the source turn (0 marks an implicit default)."""

    variant: str
    args: tuple[Any, ...]
    turn: int = 1

    def __post_init__(self) -> None:
        if self.variant not in VARIANT_DOMAIN:
            raise ConstraintError(f"unknown constraint type {self.variant!r}")
        signature = VOCABULARY[VARIANT_DOMAIN[self.variant]][self.variant]
        args = tuple(self.args)
        if len(args) != len(signature):
            raise ConstraintError(f"{self.variant} takes {len(signature)} arguments, got {len(args)}")
        norm = []
        for i, (arg, kind) in enumerate(zip(args, signature)):
            if kind in _INT_KINDS:
                if isinstance(arg, bool) or not isinstance(arg, int):
                    raise ConstraintError(f"argument {i + 1} of {self.variant} must be an integer, got {arg!r}")
            elif not isinstance(arg, str) or not arg:
                raise ConstraintError(f"argument {i + 1} of {self.variant} must be a name, got {arg!r}")
            norm.append(arg)
        if self.variant in SYMMETRIC and _sort_key(norm[1]) < _sort_key(norm[0]):
            norm[0], norm[1] = norm[1], norm[0]
        object.__setattr__(self, "args", tuple(norm))
        if isinstance(self.turn, bool) or not isinstance(self.turn, int) or self.turn < 0:
            raise ConstraintError(f"turn must be a non-negative integer, got {self.turn!r}")

    @property
    def domain(self) -> DomainKind:
        return VARIANT_DOMAIN[self.variant]

    @property
    def key(self) -> str:
        return canonicalize(self)

    def at_turn(self, turn: int) -> Constraint:
        return Constraint(self.variant, self.args, turn)

    def to_json(self) -> dict[str, Any]:
        return {"type": self.variant, "args": list(self.args), "turn": self.turn}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Constraint:
        try:
            return cls(obj["type"], tuple(obj["args"]), obj.get("turn", 1))
        except (KeyError, TypeError) as exc:
            raise ConstraintError(f"malformed constraint object {obj!r}") from exc

    def __str__(self) -> str:
        return canonicalize(self)


def canonicalize(c: Constraint) -> str:
    """Stable, human-auditable key, e.g. ``not_adjacent(charlie,frank)``."""
    return f"{c.variant}({','.join(str(a).lower() for a in c.args)})"


def validate_constraint(c: Constraint, schema: DomainSchema) -> None:
    """Raise :class:`ConstraintError` naming the offending argument."""
    if c.domain is not schema.kind:
        raise ConstraintError(f"{c.key}: {c.variant} belongs to {c.domain}, schema is {schema.kind}")
    signature = VOCABULARY[schema.kind][c.variant]
    seen = []
    for i, (arg, kind) in enumerate(zip(c.args, signature), start=1):
        where = f"{c.key}: argument {i}"
        if kind == "entity":
            if arg not in schema.entities:
                raise ConstraintError(f"{where}: unknown entity {arg!r}")
            if arg in seen:
                raise ConstraintError(f"{where}: entity {arg!r} repeated")
            seen.append(arg)
        elif kind == "category":
            if arg not in schema.category_names:
                raise ConstraintError(f"{where}: unknown category {arg!r}")
        elif kind == "value":
            if arg not in schema.category_values(c.args[1]):
                raise ConstraintError(f"{where}: {arg!r} is not a value of {c.args[1]!r}")
        elif kind == "slot":
            if not 1 <= arg <= schema.slots:
                raise ConstraintError(f"{where}: slot {arg} outside 1..{schema.slots}")
        elif kind == "duration":
            if not 1 <= arg <= schema.max_duration:
                raise ConstraintError(f"{where}: duration {arg} outside 1..{schema.max_duration}")
        elif kind == "seat":
            if not 1 <= arg <= schema.seats:
                raise ConstraintError(f"{where}: seat {arg} outside 1..{schema.seats}")
        elif kind == "distance":
            if not 1 <= arg <= schema.seats - 1:
                raise ConstraintError(f"{where}: distance {arg} outside 1..{schema.seats - 1}")
    if c.variant == "start_between" and c.args[1] >= c.args[2]:
        raise ConstraintError(f"{c.key}: start_between needs lo < hi")
    if c.variant == "opposite" and schema.seats % 2:
        raise ConstraintError(f"{c.key}: opposite is undefined for an odd seat count")


# --------------------------------------------------------------------------
# seat geometry


def seat_distance(i: int, j: int, schema: DomainSchema) -> int:
    d = abs(i - j)
    if schema.shape == "round":
        return min(d, schema.seats - d)
    return d


def seats_adjacent(i: int, j: int, schema: DomainSchema) -> bool:
    if schema.shape == "round":
        return seat_distance(i, j, schema) == 1
    half = schema.seats // 2
    return abs(i - j) == 1 and (i - 1) // half == (j - 1) // half


def seats_opposite(i: int, j: int, schema: DomainSchema) -> bool:
    p = schema.seats
    return p % 2 == 0 and abs(i - j) == p // 2


# --------------------------------------------------------------------------
# semantics


Var = Any  # entity name, or (entity, category) in the logic grid


def scope_and_predicate(c: Constraint, schema: DomainSchema) -> tuple[tuple[Var, ...], Callable[..., bool]]:
    """Variables a constraint reads and a predicate over their values.

    Variables are entity names, except in the logic grid where they are
    ``(entity, category)`` pairs whose values are value names. Scheduling
    values are ``(start, duration)`` tuples and seating values are seats.
    """
    v, a = c.variant, c.args
    if v in ("eq_value", "neq_value"):
        target = a[2]
        if v == "eq_value":
            return ((a[0], a[1]),), lambda x: x == target
        return ((a[0], a[1]),), lambda x: x != target
    if v == "neq_attr":
        return ((a[0], a[2]), (a[1], a[2])), lambda x, y: x != y
    if v == "lt_attr":
        order = {val: i for i, val in enumerate(schema.category_values(a[2]))}
        return ((a[0], a[2]), (a[1], a[2])), lambda x, y: order[x] < order[y]
    if v == "at_slot":
        s = a[1]
        return (a[0],), lambda x: x[0] == s
    if v == "not_at_slot":
        s = a[1]
        return (a[0],), lambda x: not x[0] <= s <= x[0] + x[1] - 1
    if v == "same_slot":
        return (a[0], a[1]), lambda x, y: x[0] == y[0]
    if v == "not_simultaneous":
        return (a[0], a[1]), lambda x, y: x[0] != y[0]
    if v == "duration_eq":
        d = a[1]
        return (a[0],), lambda x: x[1] == d
    if v == "start_between":
        lo, hi = a[1], a[2]
        return (a[0],), lambda x: lo <= x[0] <= hi
    if v == "at_position":
        k = a[1]
        return (a[0],), lambda x: x == k
    if v == "not_at_position":
        k = a[1]
        return (a[0],), lambda x: x != k
    if v == "adjacent":
        return (a[0], a[1]), lambda x, y: seats_adjacent(x, y, schema)
    if v == "not_adjacent":
        return (a[0], a[1]), lambda x, y: not seats_adjacent(x, y, schema)
    if v == "min_separation":
        k = a[2]
        return (a[0], a[1]), lambda x, y: seat_distance(x, y, schema) >= k
    if v == "opposite":
        return (a[0], a[1]), lambda x, y: seats_opposite(x, y, schema)
    if v == "left_of":
        return (a[0], a[1]), lambda x, y: x < y
    raise ConstraintError(f"no semantics for {v}")  # pragma: no cover


def is_tautology(c: Constraint, schema: DomainSchema) -> bool:
    """Syntactic check for constraints every complete assignment satisfies."""
    if c.variant == "neq_attr":
        return True  # categories are bijections
    if c.variant == "min_separation":
        return c.args[2] <= 1
    if c.variant == "start_between":
        return c.args[1] <= 1 and c.args[2] >= schema.slots
    return False


# --------------------------------------------------------------------------
# assignments


@dataclass(frozen=True)
class Assignment:
    """Per-domain mapping of entities to values.

    ``logic_grid``: ``{entity: {category: value}}``; ``scheduling``:
    ``{event: (start, duration)}``; ``seating``: ``{person: seat}``.
    """

    domain: DomainKind
    values: Mapping[str, Any] = field(default_factory=dict)

    def variable_values(self) -> dict[Var, Any]:
        """Flatten to solver variables (``(entity, category)`` in the grid)."""
        if self.domain is DomainKind.LOGIC_GRID:
            return {(e, cat): val for e, row in self.values.items() for cat, val in row.items()}
        return dict(self.values)

    def to_json(self) -> dict[str, Any]:
        if self.domain is DomainKind.LOGIC_GRID:
            return {e: dict(row) for e, row in self.values.items()}
        if self.domain is DomainKind.SCHEDULING:
            return {e: {"start": s, "duration": d} for e, (s, d) in self.values.items()}
        return dict(self.values)

    @classmethod
    def from_variables(cls, schema: DomainSchema, variables: Mapping[Var, Any]) -> Assignment:
        if schema.kind is DomainKind.LOGIC_GRID:
            rows: dict[str, dict[str, str]] = {}
            for e in schema.entities:
                for cat in schema.category_names:
                    if (e, cat) in variables:
                        rows.setdefault(e, {})[cat] = variables[(e, cat)]
            return cls(schema.kind, rows)
        return cls(schema.kind, {e: variables[e] for e in schema.entities if e in variables})


@dataclass(frozen=True)
class ValidationReport:
    missing: tuple[str, ...] = ()
    duplicates: tuple[str, ...] = ()
    out_of_range: tuple[str, ...] = ()
    unknown: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not (self.missing or self.duplicates or self.out_of_range or self.unknown)

    def describe(self) -> str:
        parts = []
        for label in ("missing", "duplicates", "out_of_range", "unknown"):
            items = getattr(self, label)
            if items:
                parts.append(f"{label}: {', '.join(items)}")
        return "; ".join(parts)


def schema_validate(a: Assignment, s: DomainSchema) -> ValidationReport:
    """List every way ``a`` fails to be a complete assignment for ``s``."""
    missing, dups, oor, unknown = [], [], [], []
    if a.domain is not s.kind:
        return ValidationReport(unknown=(f"assignment domain {a.domain} != {s.kind}",))
    unknown.extend(f"entity {e}" for e in a.values if e not in s.entities)
    if s.kind is DomainKind.LOGIC_GRID:
        for cat, allowed in s.categories:
            used = []
            for e in s.entities:
                row = a.values.get(e)
                if row is None or cat not in row:
                    missing.append(f"{e}.{cat}")
                    continue
                if row[cat] not in allowed:
                    oor.append(f"{e}.{cat}={row[cat]}")
                else:
                    used.append(row[cat])
            for val, n in Counter(used).items():
                if n > 1:
                    holders = [e for e in s.entities if a.values.get(e, {}).get(cat) == val]
                    dups.append(f"{cat}={val} held by {'/'.join(holders)}")
        for e, row in a.values.items():
            if e in s.entities:
                unknown.extend(f"{e}.{cat}" for cat in row if cat not in s.category_names)
    elif s.kind is DomainKind.SCHEDULING:
        for e in s.entities:
            if e not in a.values:
                missing.append(e)
                continue
            start, dur = a.values[e]
            if not (1 <= dur <= s.max_duration and 1 <= start and start + dur - 1 <= s.slots):
                oor.append(f"{e}=(start {start}, duration {dur})")
    else:
        used = []
        for e in s.entities:
            if e not in a.values:
                missing.append(e)
                continue
            seat = a.values[e]
            if not 1 <= seat <= s.seats:
                oor.append(f"{e}={seat}")
            else:
                used.append(seat)
        for seat, n in Counter(used).items():
            if n > 1:
                holders = [e for e in s.entities if a.values.get(e) == seat]
                dups.append(f"seat {seat} held by {'/'.join(holders)}")
    return ValidationReport(tuple(missing), tuple(dups), tuple(oor), tuple(unknown))


def evaluate(c: Constraint, a: Assignment, s: DomainSchema) -> bool:
    """True iff complete assignment ``a`` satisfies ``c``."""
    report = schema_validate(a, s)
    if not report.ok:
        raise IncompleteAssignmentError(f"evaluate needs a complete assignment ({report.describe()})")
    validate_constraint(c, s)
    scope, pred = scope_and_predicate(c, s)
    flat = a.variable_values()
    return bool(pred(*(flat[v] for v in scope)))
