"""Deterministic stand-in for a model, with injectable failure modes.

Each (seed, problem, turn) gets one categorical fault draw. The answer and
the extraction for that turn are both derived from the same plan, so a
contradiction injected by the extractor is mirrored by an answer that
believes it. Repairs succeed independently per attempt with probability
``repair_competence``; an unrepaired retry repeats the same fault.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from typing import Any

from driftcheck.agents.base import AgentReply, ExtractionResult, MethodKind, RepairPacket, TurnContext
from driftcheck.domains import Assignment, Constraint, DomainSchema
from driftcheck.generator import substream
from driftcheck.solver import check_sat, close

FAULTS = ("drift", "contra", "parse", "incomplete", "extract_empty")


@dataclass(frozen=True)
class MockPolicy:
    p_drift: float = 0.0
    p_contra: float = 0.0
    p_parse: float = 0.0
    p_incomplete: float = 0.0
    p_extract_empty: float = 0.0
    repair_competence: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        probs = [self.p_drift, self.p_contra, self.p_parse, self.p_incomplete, self.p_extract_empty]
        for p in probs + [self.repair_competence]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        if sum(probs) > 1.0 + 1e-12:
            raise ValueError("fault probabilities must sum to at most 1")

    @classmethod
    def oracle(cls, seed: int = 0) -> MockPolicy:
        return cls(seed=seed)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> MockPolicy:
        return cls(**obj)


@dataclass(frozen=True)
class TurnPlan:
    fault: str | None  # one of FAULTS, or None
    answer: Assignment | None = None  # faulty answer (drift/contra/incomplete source)
    target: Constraint | None = None  # gold constraint violated or contradicted
    twin: Constraint | None = None  # injected contradicting constraint
    dropped: str | None = None  # entity omitted by an incomplete answer


def contradicting_twin(c: Constraint, s: DomainSchema, pick: Any) -> Constraint | None:
    """A constraint that no assignment can satisfy together with ``c``."""
    a, v, t = c.args, c.variant, c.turn
    swap = {
        "eq_value": "neq_value",
        "neq_value": "eq_value",
        "at_slot": "not_at_slot",
        "not_at_slot": "at_slot",
        "same_slot": "not_simultaneous",
        "not_simultaneous": "same_slot",
        "at_position": "not_at_position",
        "not_at_position": "at_position",
        "adjacent": "not_adjacent",
        "not_adjacent": "adjacent",
    }
    if v in swap:
        return Constraint(swap[v], a, t)
    if v == "lt_attr":
        return Constraint("lt_attr", (a[1], a[0], a[2]), t)
    if v == "left_of":
        return Constraint("left_of", (a[1], a[0]), t)
    if v == "duration_eq":
        others = [d for d in range(1, s.max_duration + 1) if d != a[1]]
        return Constraint("duration_eq", (a[0], pick(others)), t) if others else None
    if v == "start_between":
        outside = [x for x in range(1, s.slots + 1) if not a[1] <= x <= a[2]]
        return Constraint("at_slot", (a[0], pick(outside)), t) if outside else None
    if v in ("min_separation", "opposite"):
        return Constraint("adjacent", (a[0], a[1]), t)
    return None  # neq_attr holds everywhere; nothing contradicts it


def format_answer(a: Assignment, method: MethodKind, drop: str | None = None) -> str:
    obj = a.to_json()
    if drop is not None:
        obj.pop(drop, None)
    body = json.dumps(obj)
    if method is MethodKind.COT:
        return (
            "- Collected every active constraint so far.\n"
            "- Checked the candidate assignment against each of them.\n"
            f"```json\n{body}\n```"
        )
    return body


def _broken(a: Assignment) -> str:
    text = json.dumps(a.to_json())
    return "Final answer: " + text[: max(1, len(text) // 2)]


class MockAgent:
    """Synchronous, stateless apart from a memo of per-turn plans."""

    def __init__(self, policy: MockPolicy | None = None, agent_id: str = "mock"):
        self.policy = policy or MockPolicy()
        self.agent_id = agent_id
        self._plans: dict[tuple[Any, ...], TurnPlan] = {}
        self._lock = threading.Lock()

    # -- planning ---------------------------------------------------------

    def _solve(self, s: DomainSchema, constraints: list[Constraint], violating: tuple[Constraint, ...] = ()) -> Assignment | None:
        return check_sat(s, close(constraints, s), violating=violating).witness

    def gold_answer(self, ctx: TurnContext) -> Assignment:
        found = self._solve(ctx.schema, list(ctx.gold))
        if found is None:
            raise ValueError(f"{ctx.problem_id} turn {ctx.turn}: gold constraints are unsatisfiable")
        return found

    def plan_for(self, ctx: TurnContext) -> TurnPlan:
        key = (ctx.problem_id, ctx.turn, ctx.schema, ctx.gold, ctx.gold_new)
        with self._lock:
            cached = self._plans.get(key)
        if cached is None:
            cached = self._make_plan(ctx)
            with self._lock:
                self._plans[key] = cached
        return cached

    def _make_plan(self, ctx: TurnContext) -> TurnPlan:
        pol = self.policy
        rng = substream("mock", pol.seed, ctx.problem_id, ctx.turn)
        u = rng.random()
        fault = None
        edge = 0.0
        for name, p in zip(FAULTS, (pol.p_drift, pol.p_contra, pol.p_parse, pol.p_incomplete, pol.p_extract_empty)):
            edge += p
            if u < edge:
                fault = name
                break
        s = ctx.schema
        gold = list(ctx.gold)
        if fault == "drift":
            order = gold[:]
            rng.shuffle(order)
            for c in order:
                rest = [g for g in gold if g.key != c.key]
                found = self._solve(s, rest, (c,))
                if found is not None:
                    return TurnPlan("drift", found, target=c)
            return TurnPlan(None)
        if fault == "contra":
            keys = {g.key for g in gold}
            order = list(ctx.gold_new)
            rng.shuffle(order)
            for c in order:
                twin = contradicting_twin(c, s, rng.choice)
                if twin is None or twin.key in keys:
                    continue
                rest = [g for g in gold if g.key != c.key]
                found = self._solve(s, rest + [twin])
                if found is not None:
                    return TurnPlan("contra", found, target=c, twin=twin.at_turn(ctx.turn))
            return TurnPlan(None)
        if fault == "incomplete":
            return TurnPlan("incomplete", dropped=rng.choice(s.entities))
        return TurnPlan(fault)

    def _fixed(self, ctx: TurnContext, attempt: int) -> bool:
        comp = self.policy.repair_competence
        return any(
            substream("mock-repair", self.policy.seed, ctx.problem_id, ctx.turn, j).random() < comp
            for j in range(1, attempt + 1)
        )

    def _render(self, ctx: TurnContext, attempt: int) -> str:
        plan = self.plan_for(ctx)
        if plan.fault is None or plan.fault == "extract_empty" or self._fixed(ctx, attempt):
            return format_answer(self.gold_answer(ctx), ctx.method)
        if plan.fault in ("drift", "contra"):
            return format_answer(plan.answer, ctx.method)
        if plan.fault == "parse":
            return _broken(self.gold_answer(ctx))
        return format_answer(self.gold_answer(ctx), ctx.method, drop=plan.dropped)

    # -- agent interface --------------------------------------------------

    def generate_answer(self, ctx: TurnContext) -> AgentReply:
        return AgentReply(self._render(ctx, 0))

    def extract_constraints(self, ctx: TurnContext, answer: str | None, attempt: int = 0) -> ExtractionResult:
        plan = self.plan_for(ctx)
        new = tuple(c.at_turn(ctx.turn) for c in ctx.gold_new)
        if plan.fault is None or self._fixed(ctx, attempt):
            return ExtractionResult(new, empty_flag=not new)
        if plan.fault == "extract_empty":
            return ExtractionResult((), empty_flag=True)
        if plan.fault == "contra":
            return ExtractionResult(new + (plan.twin,))
        return ExtractionResult(new, empty_flag=not new)

    def repair_answer(
        self,
        ctx: TurnContext,
        prior_ledger_text: str,
        packet: RepairPacket,
        failed_answer: str | None,
        attempt: int,
    ) -> AgentReply:
        return AgentReply(self._render(ctx, attempt))


def is_oracle(policy: MockPolicy) -> bool:
    return not any((policy.p_drift, policy.p_contra, policy.p_parse, policy.p_incomplete, policy.p_extract_empty))


__all__ = ["FAULTS", "MockAgent", "MockPolicy", "TurnPlan", "contradicting_twin", "format_answer", "is_oracle"]
