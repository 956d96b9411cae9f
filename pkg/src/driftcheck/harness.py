"""Turn processing with verification and optional solver-guided repair.

For every turn: generate an answer, extract the turn's constraints, merge
them into the threaded ledger and verify. Under ``mus_repair`` a failing
verdict triggers up to ``k`` repair rounds; each round re-extracts against
the previous turn's ledger, never against a failed attempt's ledger.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from driftcheck.agents import prompts
from driftcheck.agents.base import Agent, AgentError, AgentReply, ExtractionResult, MethodKind, RepairPacket, TurnContext
from driftcheck.domains import DomainSchema
from driftcheck.generator import Problem
from driftcheck.ledger import Ledger, active_constraints, merge, serialize
from driftcheck.solver import extract_mus, violated_constraints
from driftcheck.verifier import TriggerCode, TurnVerdict, verify_turn

TRACE_FORMAT = "driftbench-trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    k: int = 2
    truncation_retries: int = 2
    ledger_budget: int = 3000
    workers: int = 1
    seed: int = 0
    record_timing: bool = False

    def __post_init__(self) -> None:
        if self.k < 0 or self.truncation_retries < 0 or self.ledger_budget <= 0 or self.workers < 1:
            raise ValueError("invalid run configuration")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    triggers: tuple[str, ...]
    z3_sat: bool
    channel: str
    answer_correct: bool
    parsed: bool
    complete: bool

    @classmethod
    def from_verdict(cls, attempt: int, v: TurnVerdict) -> AttemptRecord:
        return cls(attempt, tuple(v.trigger_names), v.ledger_sat, v.channel.value, v.correct_vs_gold, v.parsed, v.complete)


@dataclass(frozen=True)
class TraceRow:
    problem_id: str
    domain: str
    method: str
    agent: str
    turn: int
    attempts: int
    z3_sat: bool
    triggers: tuple[str, ...]
    channel: str
    answer_correct: bool
    truncated: bool
    parsed: bool
    complete: bool
    ledger_size: int = 0
    errored: bool = False
    raw_answer: str | None = None
    attempt_records: tuple[AttemptRecord, ...] = ()
    elapsed_s: float | None = None

    def to_json(self) -> dict[str, Any]:
        out = {
            "problem_id": self.problem_id,
            "domain": self.domain,
            "method": self.method,
            "agent": self.agent,
            "turn": self.turn,
            "attempts": self.attempts,
            "z3_sat": self.z3_sat,
            "triggers": list(self.triggers),
            "channel": self.channel,
            "answer_correct": self.answer_correct,
            "truncated": self.truncated,
            "parsed": self.parsed,
            "complete": self.complete,
            "ledger_size": self.ledger_size,
            "errored": self.errored,
            "raw_answer": self.raw_answer,
            "attempt_records": [asdict(a) | {"triggers": list(a.triggers)} for a in self.attempt_records],
        }
        if self.elapsed_s is not None:
            out["elapsed_s"] = self.elapsed_s
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> TraceRow:
        records = tuple(
            AttemptRecord(
                r["attempt"], tuple(r["triggers"]), r["z3_sat"], r["channel"], r["answer_correct"], r["parsed"], r["complete"]
            )
            for r in obj.get("attempt_records", ())
        )
        return cls(
            problem_id=obj["problem_id"],
            domain=obj["domain"],
            method=obj["method"],
            agent=obj["agent"],
            turn=obj["turn"],
            attempts=obj["attempts"],
            z3_sat=obj["z3_sat"],
            triggers=tuple(obj["triggers"]),
            channel=obj["channel"],
            answer_correct=obj["answer_correct"],
            truncated=obj["truncated"],
            parsed=obj["parsed"],
            complete=obj["complete"],
            ledger_size=obj.get("ledger_size", 0),
            errored=obj.get("errored", False),
            raw_answer=obj.get("raw_answer"),
            attempt_records=records,
            elapsed_s=obj.get("elapsed_s"),
        )

    @property
    def sort_key(self) -> tuple[str, str, str, int]:
        return (self.agent, self.method, self.problem_id, self.turn)


# --------------------------------------------------------------------------
# repair feedback


def _trigger_detail(code: TriggerCode, v: TurnVerdict, ledger: Ledger, s: DomainSchema) -> str:
    if code is TriggerCode.UNSAT_LEDGER:
        return "the committed constraints cannot all hold; see the conflicting subset"
    if code is TriggerCode.ANSWER_LEDGER_CONFLICT:
        broken = violated_constraints(v.assignment, active_constraints(ledger), s)
        return "assignment violates " + "; ".join(
            f"{c.key} (turn {c.turn})" if c.turn else f"{c.key} (default)" for c in broken
        )
    if code is TriggerCode.INCOMPLETE_ASSIGNMENT:
        return v.completeness_detail or "assignment is incomplete"
    if code is TriggerCode.ANSWER_PARSE_FAILURE:
        pf = v.parse_failure
        return f"{pf.reason}: {pf.detail}" if pf else "answer could not be parsed"
    return "no constraints could be extracted for this turn"


def build_repair_packet(v: TurnVerdict, ledger: Ledger, s: DomainSchema) -> RepairPacket:
    """Triggers with details; the MUS only when the ledger is unsatisfiable."""
    if not v.triggers:
        raise ValueError("a repair packet needs at least one trigger")
    triggers = tuple((t.value, _trigger_detail(t, v, ledger, s)) for t in v.triggers)
    active = active_constraints(ledger)
    mus = tuple(extract_mus(s, active)) if TriggerCode.UNSAT_LEDGER in v.triggers else None
    violated: tuple = ()
    if TriggerCode.ANSWER_LEDGER_CONFLICT in v.triggers:
        violated = tuple(violated_constraints(v.assignment, active, s))
    return RepairPacket(triggers, mus, violated)


# --------------------------------------------------------------------------
# turn and trajectory processing


@dataclass
class TurnOutcome:
    answer: str | None
    ledger: Ledger
    row: TraceRow
    verdict: TurnVerdict
    user_message: str
    packets: list[RepairPacket] = field(default_factory=list)


def _safe_reply(call: Any, *args: Any) -> AgentReply:
    try:
        return call(*args)
    except AgentError as exc:
        return AgentReply(None, error=str(exc))


def _safe_extract(agent: Agent, ctx: TurnContext, answer: str | None, attempt: int) -> ExtractionResult:
    try:
        return agent.extract_constraints(ctx, answer, attempt)
    except AgentError as exc:
        return ExtractionResult((), empty_flag=True, error=str(exc))


def process_turn(
    problem: Problem,
    t: int,
    method: MethodKind | str,
    agent: Agent,
    ledger_prev: Ledger,
    cfg: RunConfig = RunConfig(),
    history: Sequence[tuple[str, str]] = (),
) -> TurnOutcome:
    method = MethodKind(method)
    s = problem.schema
    turn = problem.turns[t - 1]
    gold = tuple(problem.gold_prefix(t))
    prior_text = serialize(ledger_prev, cfg.ledger_budget)
    ctx = TurnContext(
        problem_id=problem.id,
        schema=s,
        method=method,
        turn=t,
        utterance=turn.utterance,
        history=tuple(history),
        ledger_text=prior_text if method.uses_ledger else None,
        gold=gold,
        gold_new=turn.constraints,
    )
    started = time.perf_counter()

    def attempt(reply: AgentReply, i: int) -> tuple[Ledger, TurnVerdict]:
        ext = _safe_extract(agent, ctx, reply.text, i)
        ledger = merge(ledger_prev, ext.constraints, t)
        verdict = verify_turn(ledger, reply.text, s, gold, ext.empty_flag, turn_introduced=bool(turn.constraints))
        return ledger, verdict

    reply = _safe_reply(agent.generate_answer, ctx)
    errored = reply.error is not None
    ledger, verdict = attempt(reply, 0)
    records = [AttemptRecord.from_verdict(0, verdict)]
    packets: list[RepairPacket] = []
    repairs = 0
    if method.repairs:
        while not verdict.clean and repairs < cfg.k:
            repairs += 1
            packet = build_repair_packet(verdict, ledger, s)
            packets.append(packet)
            reply = _safe_reply(agent.repair_answer, ctx, prior_text, packet, reply.text, repairs)
            errored = errored or reply.error is not None
            ledger, verdict = attempt(reply, repairs)
            records.append(AttemptRecord.from_verdict(repairs, verdict))

    row = TraceRow(
        problem_id=problem.id,
        domain=problem.domain.value,
        method=method.value,
        agent=agent.agent_id,
        turn=t,
        attempts=repairs,
        z3_sat=verdict.ledger_sat,
        triggers=tuple(verdict.trigger_names),
        channel=verdict.channel.value,
        answer_correct=verdict.correct_vs_gold and reply.error is None,
        truncated=reply.truncated,
        parsed=verdict.parsed,
        complete=verdict.complete,
        ledger_size=len(ledger),
        errored=errored,
        raw_answer=reply.text,
        attempt_records=tuple(records),
        elapsed_s=round(time.perf_counter() - started, 6) if cfg.record_timing else None,
    )
    return TurnOutcome(reply.text, ledger, row, verdict, prompts.user_message(ctx), packets)


def run_problem(problem: Problem, method: MethodKind | str, agent: Agent, cfg: RunConfig = RunConfig()) -> list[TraceRow]:
    ledger = Ledger.empty(problem.schema)
    history: list[tuple[str, str]] = []
    rows = []
    for t in range(1, problem.num_turns + 1):
        out = process_turn(problem, t, method, agent, ledger, cfg, history)
        ledger = out.ledger
        history.append((out.user_message, out.answer or ""))
        rows.append(out.row)
    return rows


def run_corpus(
    problems: Sequence[Problem],
    methods: Iterable[MethodKind | str],
    agents: Sequence[Agent],
    cfg: RunConfig = RunConfig(),
) -> list[TraceRow]:
    """Cross product of (agent, method, problem); rows sorted by (agent, method, problem, turn)."""
    units = [(a, MethodKind(m), p) for a in agents for m in methods for p in problems]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(lambda u: run_problem(u[2], u[1], u[0], cfg), units))
    else:
        chunks = [run_problem(p, m, a, cfg) for a, m, p in units]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: r.sort_key)
    return rows


# --------------------------------------------------------------------------
# trace files


def config_hash(config: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def trace_lines(rows: Iterable[TraceRow], config: dict[str, Any] | None = None) -> Iterable[str]:
    config = config or {}
    yield json.dumps(
        {"format": TRACE_FORMAT, "version": TRACE_VERSION, "config_hash": config_hash(config), "config": config},
        sort_keys=True,
    )
    for r in rows:
        yield json.dumps(r.to_json(), sort_keys=True)


def write_trace(rows: Iterable[TraceRow], path: str | Path, config: dict[str, Any] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in trace_lines(rows, config):
            fh.write(line + "\n")


def read_trace(path: str | Path) -> tuple[dict[str, Any], list[TraceRow]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trace file")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT or header.get("version") != TRACE_VERSION:
        raise ValueError(f"{path}: not a version-{TRACE_VERSION} trace file")
    return header, [TraceRow.from_json(json.loads(ln)) for ln in lines[1:]]
