"""Hand-encoded transcripts with known per-turn verdict marks, plus a scripted agent.

Each case lists, per turn, the newly stated constraints, a complete answer
for each method and the expected correct/incorrect mark. Answers are full
assignments; cells that a transcript leaves unspecified are filled with
values that keep the stated verdict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from driftcheck.agents.base import AgentReply, ExtractionResult, RepairPacket, TurnContext
from driftcheck.domains import Constraint, DomainSchema
from driftcheck.generator import Problem, Turn, extract_reference, render_utterance
from driftcheck.ledger import Ledger, merge
from driftcheck.verifier import TurnVerdict, verify_turn


def C(variant: str, *args: Any) -> Constraint:
    return Constraint(variant, args)


@dataclass(frozen=True)
class FixtureTurn:
    new: tuple[Constraint, ...]
    answers: Mapping[str, Any]  # method -> JSON-able answer object or raw text
    expected: Mapping[str, bool]


@dataclass(frozen=True)
class FixtureCase:
    id: str
    schema: DomainSchema
    turns: tuple[FixtureTurn, ...]

    def problem(self) -> Problem:
        turns = []
        for t, ft in enumerate(self.turns, 1):
            cs = tuple(c.at_turn(t) for c in ft.new)
            turns.append(Turn(t, render_utterance(cs, self.schema, t), cs))
        return Problem(self.id, self.schema.kind, self.schema, tuple(turns))

    @property
    def methods(self) -> list[str]:
        return sorted(self.turns[0].answers)

    def answer_text(self, t: int, method: str) -> str:
        raw = self.turns[t - 1].answers[method]
        return raw if isinstance(raw, str) else json.dumps(raw)


def _sched(**slots: tuple[int, int] | int) -> dict[str, dict[str, int]]:
    out = {}
    for e, v in slots.items():
        start, dur = (v, 1) if isinstance(v, int) else v
        out[e] = {"start": start, "duration": dur}
    return out


SCHEDULING_249 = FixtureCase(
    "scheduling_249",
    DomainSchema.scheduling(["Sync", "Testing", "Meeting", "QA", "Planning", "Design"], slots=10, max_duration=3),
    (
        FixtureTurn(
            (C("start_between", "QA", 1, 2),),
            {
                "direct": _sched(Sync=1, Testing=3, Meeting=5, QA=1, Planning=6, Design=8),
                "mus_repair": _sched(Sync=1, Testing=3, Meeting=5, QA=2, Planning=6, Design=8),
            },
            {"direct": True, "mus_repair": True},
        ),
        FixtureTurn(
            (C("not_simultaneous", "Testing", "Design"), C("duration_eq", "QA", 3), C("at_slot", "Design", 9)),
            {
                # durations of 2 nobody asked for break the single-slot default
                "direct": _sched(Sync=1, Testing=(5, 2), Meeting=5, QA=(1, 3), Planning=6, Design=(9, 2)),
                "mus_repair": _sched(Sync=1, Testing=4, Meeting=5, QA=(2, 3), Planning=6, Design=9),
            },
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("duration_eq", "Testing", 3),),
            {
                "direct": _sched(Sync=1, Testing=(5, 3), Meeting=(9, 2), QA=(1, 3), Planning=6, Design=(9, 2)),
                "mus_repair": _sched(Sync=1, Testing=(4, 3), Meeting=8, QA=(2, 3), Planning=7, Design=9),
            },
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("at_slot", "Testing", 7), C("at_slot", "Planning", 5)),
            {
                "direct": _sched(Sync=1, Testing=(7, 3), Meeting=(9, 2), QA=(1, 3), Planning=5, Design=(9, 2)),
                "mus_repair": _sched(Sync=1, Testing=(7, 3), Meeting=6, QA=(2, 3), Planning=5, Design=9),
            },
            {"direct": False, "mus_repair": True},
        ),
    ),
)


def _grid(colors: str, pets: str, profs: str) -> dict[str, dict[str, str]]:
    people = ("Blake", "Drew", "Avery", "Finley")
    return {
        p: {"color": c, "pet": pet, "profession": prof}
        for p, c, pet, prof in zip(people, colors.split(), pets.split(), profs.split())
    }


_LOGIC_RIGHT = _grid("Red Blue Green Yellow", "Fish Dog Bird Cat", "Teacher Chef Doctor Artist")
_LOGIC_WRONG_ORDER = _grid("Red Blue Green Yellow", "Fish Dog Cat Bird", "Doctor Artist Teacher Chef")
_LOGIC_TWO_CHEFS = _grid("Red Blue Green Yellow", "Fish Dog Cat Bird", "Doctor Chef Teacher Chef")

LOGIC_GRID_021 = FixtureCase(
    "logic_grid_021",
    DomainSchema.logic_grid(
        ["Blake", "Drew", "Avery", "Finley"],
        {
            "color": ["Red", "Blue", "Green", "Yellow"],
            "pet": ["Cat", "Dog", "Bird", "Fish"],
            "profession": ["Doctor", "Artist", "Teacher", "Chef"],
        },
    ),
    (
        FixtureTurn(
            (C("lt_attr", "Finley", "Drew", "pet"), C("neq_attr", "Finley", "Avery", "pet")),
            {"direct": _LOGIC_WRONG_ORDER, "mus_repair": _LOGIC_RIGHT},
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("lt_attr", "Blake", "Finley", "color"),),
            {"direct": _LOGIC_WRONG_ORDER, "mus_repair": _LOGIC_RIGHT},
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (
                C("neq_attr", "Drew", "Finley", "pet"),
                C("neq_attr", "Avery", "Drew", "pet"),
                C("neq_attr", "Avery", "Finley", "profession"),
            ),
            {"direct": _LOGIC_WRONG_ORDER, "mus_repair": _LOGIC_RIGHT},
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("eq_value", "Drew", "profession", "Chef"),),
            {"direct": _LOGIC_TWO_CHEFS, "mus_repair": _LOGIC_RIGHT},
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("neq_attr", "Blake", "Drew", "color"), C("neq_value", "Drew", "pet", "Bird")),
            {"direct": _LOGIC_TWO_CHEFS, "mus_repair": _LOGIC_RIGHT},
            {"direct": False, "mus_repair": True},
        ),
    ),
)


def _seats(**pos: int) -> dict[str, int]:
    return dict(pos)


_SEAT_T1 = _seats(Diana=1, Ruby=5, Tina=2, Noah=4, Charlie=6, Frank=7, Karen=3)

SEATING_062 = FixtureCase(
    "seating_062",
    DomainSchema.seating(["Diana", "Ruby", "Tina", "Noah", "Charlie", "Frank", "Karen"], "round"),
    (
        FixtureTurn(
            (C("at_position", "Karen", 3), C("not_adjacent", "Karen", "Ruby")),
            {"direct": _SEAT_T1, "mus_repair": _SEAT_T1},
            {"direct": True, "mus_repair": True},
        ),
        FixtureTurn(
            (C("not_adjacent", "Charlie", "Frank"),),
            {
                "direct": _SEAT_T1,  # Charlie 6 next to Frank 7
                "mus_repair": _seats(Diana=1, Ruby=5, Tina=2, Noah=6, Charlie=7, Frank=4, Karen=3),
            },
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("min_separation", "Karen", "Noah", 1), C("min_separation", "Tina", "Frank", 2)),
            {
                "direct": json.dumps(_seats(Diana=1, Ruby=5, Tina=2, Noah=4, Charlie=6, Frank=8, Karen=3)),
                "mus_repair": _seats(Diana=4, Ruby=5, Tina=2, Noah=7, Charlie=1, Frank=6, Karen=3),
            },
            {"direct": False, "mus_repair": True},
        ),
        FixtureTurn(
            (C("not_adjacent", "Frank", "Ruby"), C("not_adjacent", "Noah", "Charlie"), C("at_position", "Diana", 6)),
            {
                "direct": _seats(Diana=6, Ruby=1, Tina=2, Noah=3, Charlie=7, Frank=5, Karen=4),
                # Charlie 7 and Frank 1 touch across the wrap-around
                "mus_repair": _seats(Diana=6, Ruby=5, Tina=4, Noah=2, Charlie=7, Frank=1, Karen=3),
            },
            {"direct": False, "mus_repair": False},
        ),
    ),
)

FIXTURES: dict[str, FixtureCase] = {f.id: f for f in (SCHEDULING_249, LOGIC_GRID_021, SEATING_062)}


@dataclass(frozen=True)
class CellResult:
    case: str
    method: str
    turn: int
    expected: bool
    got: bool
    verdict: TurnVerdict

    @property
    def ok(self) -> bool:
        return self.expected == self.got


def replay(case: FixtureCase) -> list[CellResult]:
    """Verify each scripted answer against the gold prefix and compare with the expected mark."""
    problem = case.problem()
    out = []
    for method in case.methods:
        ledger = Ledger.empty(case.schema)
        for t in range(1, problem.num_turns + 1):
            turn = problem.turns[t - 1]
            ledger = merge(ledger, extract_reference(turn.utterance, case.schema, t), t)
            v = verify_turn(ledger, case.answer_text(t, method), case.schema, problem.gold_prefix(t))
            out.append(CellResult(case.id, method, t, case.turns[t - 1].expected[method], v.correct_vs_gold, v))
    return out


def score(results: Sequence[CellResult], case: str, method: str) -> tuple[int, int]:
    cells = [r for r in results if r.case == case and r.method == method]
    return sum(r.got for r in cells), len(cells)


@dataclass
class ScriptedAgent:
    """Plays fixed answers keyed by (turn, attempt); extraction inverts the utterance templates."""

    script: Mapping[tuple[int, int], str]
    agent_id: str = "scripted"
    calls: list[tuple[str, int, int]] = field(default_factory=list)

    def _reply(self, turn: int, attempt: int) -> AgentReply:
        key = (turn, attempt)
        while key not in self.script and key[1] > 0:
            key = (turn, key[1] - 1)
        return AgentReply(self.script.get(key))

    def generate_answer(self, ctx: TurnContext) -> AgentReply:
        self.calls.append(("answer", ctx.turn, 0))
        return self._reply(ctx.turn, 0)

    def extract_constraints(self, ctx: TurnContext, answer: str | None, attempt: int = 0) -> ExtractionResult:
        self.calls.append(("extract", ctx.turn, attempt))
        cs = tuple(extract_reference(ctx.utterance, ctx.schema, ctx.turn))
        return ExtractionResult(cs, empty_flag=not cs)

    def repair_answer(
        self, ctx: TurnContext, prior_ledger_text: str, packet: RepairPacket, failed_answer: str | None, attempt: int
    ) -> AgentReply:
        self.calls.append(("repair", ctx.turn, attempt))
        return self._reply(ctx.turn, attempt)
