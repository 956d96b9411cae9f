"""Agent interface shared by the mock and HTTP implementations."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from driftcheck.domains import Constraint, DomainSchema


class MethodKind(str, enum.Enum):
    DIRECT = "direct"
    COT = "cot"
    LEDGER_ONLY = "ledger_only"
    MUS_REPAIR = "mus_repair"

    def __str__(self) -> str:
        return self.value

    @property
    def uses_ledger(self) -> bool:
        return self in (MethodKind.LEDGER_ONLY, MethodKind.MUS_REPAIR)

    @property
    def repairs(self) -> bool:
        return self is MethodKind.MUS_REPAIR


ALL_METHODS = tuple(MethodKind)


class AgentError(RuntimeError):
    """Transport or protocol failure that survived the agent's own retries."""


@dataclass(frozen=True)
class TurnContext:
    """Everything an agent may see when answering turn ``turn``.

    ``gold`` (the cumulative gold constraints) exists for the mock agent,
    which stands in for a model by solving them; the HTTP agent ignores it.
    """

    problem_id: str
    schema: DomainSchema
    method: MethodKind
    turn: int
    utterance: str
    history: tuple[tuple[str, str], ...] = ()
    ledger_text: str | None = None
    gold: tuple[Constraint, ...] = ()
    gold_new: tuple[Constraint, ...] = ()


@dataclass(frozen=True)
class AgentReply:
    text: str | None
    truncated: bool = False
    error: str | None = None
    calls: int = 1


@dataclass(frozen=True)
class ExtractionResult:
    constraints: tuple[Constraint, ...] = ()
    empty_flag: bool = False
    error: str | None = None


@dataclass(frozen=True)
class RepairPacket:
    """Feedback for one retry: trigger details always, a MUS only on contradiction."""

    triggers: tuple[tuple[str, str], ...]
    mus: tuple[Constraint, ...] | None = None
    violated: tuple[Constraint, ...] = ()

    def __post_init__(self) -> None:
        has_unsat = any(code == "unsat_ledger" for code, _ in self.triggers)
        if has_unsat != (self.mus is not None):
            raise ValueError("a MUS accompanies the packet exactly when unsat_ledger fired")

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.triggers)


@runtime_checkable
class Agent(Protocol):
    agent_id: str

    def generate_answer(self, ctx: TurnContext) -> AgentReply: ...

    def extract_constraints(self, ctx: TurnContext, answer: str | None, attempt: int = 0) -> ExtractionResult: ...

    def repair_answer(
        self,
        ctx: TurnContext,
        prior_ledger_text: str,
        packet: RepairPacket,
        failed_answer: str | None,
        attempt: int,
    ) -> AgentReply: ...


def parse_methods(names: Sequence[str] | str) -> list[MethodKind]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    return [MethodKind(n.strip()) for n in names]


__all__ = [
    "ALL_METHODS",
    "Agent",
    "AgentError",
    "AgentReply",
    "ExtractionResult",
    "MethodKind",
    "RepairPacket",
    "TurnContext",
    "parse_methods",
]
