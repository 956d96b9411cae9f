"""Per-turn verification: parse, completeness, ledger satisfiability, gold correctness.

Every failure becomes verdict content; nothing here raises on bad model output.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from driftcheck.domains import Assignment, Constraint, DomainKind, DomainSchema, schema_validate
from driftcheck.ledger import Ledger, active_constraints
from driftcheck.solver import check_sat, satisfies


class TriggerCode(str, enum.Enum):
    ANSWER_LEDGER_CONFLICT = "answer_ledger_conflict"
    UNSAT_LEDGER = "unsat_ledger"
    INCOMPLETE_ASSIGNMENT = "incomplete_assignment"
    ANSWER_PARSE_FAILURE = "answer_parse_failure"
    CONSTRAINT_EXTRACTION_FAILURE = "constraint_extraction_failure"

    def __str__(self) -> str:
        return self.value


TRIGGER_ORDER = tuple(TriggerCode)


class Channel(str, enum.Enum):
    CONSISTENT = "consistent"
    DRIFT = "drift"
    CONTRADICTION = "contradiction"
    OTHER = "other"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ParseFailure:
    reason: str  # not_json | wrong_shape | unknown_entity | out_of_range_value
    detail: str = ""

    def __bool__(self) -> bool:
        return False


_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)


def strip_fence(text: str) -> str:
    blocks = _FENCE.findall(text)
    if len(blocks) == 1:
        return blocks[0].strip()
    return text.strip()


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_answer(text: str | None, s: DomainSchema) -> Assignment | ParseFailure:
    """Strictly parse a model answer into an assignment.

    The body (or the content of its single fenced block) must be exactly one
    JSON object in the domain's answer shape. Values outside the domain are
    parse failures; duplicated values parse fine and are caught later as
    incompleteness.
    """
    if text is None:
        return ParseFailure("not_json", "no response")
    body = strip_fence(text)
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, RecursionError) as exc:
        return ParseFailure("not_json", str(exc))
    if not isinstance(obj, dict):
        return ParseFailure("wrong_shape", f"expected an object, got {type(obj).__name__}")
    unknown = [k for k in obj if k not in s.entities]
    if unknown:
        return ParseFailure("unknown_entity", ", ".join(map(str, unknown)))

    if s.kind is DomainKind.LOGIC_GRID:
        rows: dict[str, dict[str, str]] = {}
        for e, row in obj.items():
            if not isinstance(row, dict):
                return ParseFailure("wrong_shape", f"{e}: expected an object of category values")
            for cat, val in row.items():
                if cat not in s.category_names:
                    return ParseFailure("unknown_entity", f"{e}.{cat}")
                if not isinstance(val, str):
                    return ParseFailure("wrong_shape", f"{e}.{cat}: expected a string")
                if val not in s.category_values(cat):
                    return ParseFailure("out_of_range_value", f"{e}.{cat}={val}")
            rows[e] = dict(row)
        return Assignment(s.kind, rows)

    if s.kind is DomainKind.SCHEDULING:
        slots: dict[str, tuple[int, int]] = {}
        for e, spec in obj.items():
            if not isinstance(spec, dict) or "start" not in spec or set(spec) - {"start", "duration"}:
                return ParseFailure("wrong_shape", f"{e}: expected {{\"start\": int, \"duration\": int}}")
            start, dur = spec["start"], spec.get("duration", 1)
            if not (_is_int(start) and _is_int(dur)):
                return ParseFailure("wrong_shape", f"{e}: start and duration must be integers")
            if not (1 <= dur <= s.max_duration and 1 <= start and start + dur - 1 <= s.slots):
                return ParseFailure("out_of_range_value", f"{e}=(start {start}, duration {dur})")
            slots[e] = (start, dur)
        return Assignment(s.kind, slots)

    seats: dict[str, int] = {}
    for e, seat in obj.items():
        if not _is_int(seat):
            return ParseFailure("wrong_shape", f"{e}: seat must be an integer")
        if not 1 <= seat <= s.seats:
            return ParseFailure("out_of_range_value", f"{e}={seat} (only {s.seats} seats)")
        seats[e] = seat
    return Assignment(s.kind, seats)


@dataclass(frozen=True)
class TurnVerdict:
    parsed: bool
    complete: bool
    ledger_sat: bool
    satisfies_ledger: bool | None
    correct_vs_gold: bool
    triggers: tuple[TriggerCode, ...]
    channel: Channel
    assignment: Assignment | None = None
    parse_failure: ParseFailure | None = None
    completeness_detail: str = ""

    @property
    def clean(self) -> bool:
        """Repair break condition: satisfiable ledger and no trigger."""
        return self.ledger_sat and not self.triggers

    @property
    def trigger_names(self) -> list[str]:
        return [t.value for t in self.triggers]


def classify_channel(v: TurnVerdict | Any) -> Channel:
    if not v.ledger_sat:
        return Channel.CONTRADICTION
    if v.parsed and v.complete and not v.satisfies_ledger:
        return Channel.DRIFT
    if not (v.parsed and v.complete):
        return Channel.OTHER
    return Channel.CONSISTENT


@dataclass(frozen=True)
class _Flags:
    parsed: bool
    complete: bool
    ledger_sat: bool
    satisfies_ledger: bool | None


def verify_turn(
    ledger: Ledger | Sequence[Constraint],
    answer: str | None,
    s: DomainSchema,
    gold: Iterable[Constraint],
    extraction_empty: bool = False,
    turn_introduced: bool = True,
) -> TurnVerdict:
    """Check one turn's answer against the merged ledger and the gold prefix.

    ``turn_introduced`` says whether the user turn carried new constraints;
    an empty extraction only counts as a failure when it did.
    """
    active = active_constraints(ledger) if isinstance(ledger, Ledger) else list(ledger)
    ledger_sat = check_sat(s, active).sat
    parsed_or_fail = parse_answer(answer, s)
    parsed = isinstance(parsed_or_fail, Assignment)
    assignment = parsed_or_fail if parsed else None
    complete = False
    detail = ""
    sat_l: bool | None = None
    correct = False
    if assignment is not None:
        report = schema_validate(assignment, s)
        complete = report.ok
        detail = report.describe()
        if complete:
            sat_l = satisfies(assignment, active, s)
            correct = satisfies(assignment, list(gold), s)

    triggers = []
    if not ledger_sat:
        triggers.append(TriggerCode.UNSAT_LEDGER)
    if ledger_sat and parsed and complete and not sat_l:
        triggers.append(TriggerCode.ANSWER_LEDGER_CONFLICT)
    if parsed and not complete:
        triggers.append(TriggerCode.INCOMPLETE_ASSIGNMENT)
    if not parsed:
        triggers.append(TriggerCode.ANSWER_PARSE_FAILURE)
    if extraction_empty and turn_introduced:
        triggers.append(TriggerCode.CONSTRAINT_EXTRACTION_FAILURE)
    triggers.sort(key=TRIGGER_ORDER.index)

    channel = classify_channel(_Flags(parsed, complete, ledger_sat, sat_l))
    return TurnVerdict(
        parsed=parsed,
        complete=complete,
        ledger_sat=ledger_sat,
        satisfies_ledger=sat_l,
        correct_vs_gold=correct,
        triggers=tuple(triggers),
        channel=channel,
        assignment=assignment,
        parse_failure=None if parsed else parsed_or_fail,
        completeness_detail=detail,
    )
