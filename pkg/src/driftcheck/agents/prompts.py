"""Prompt assembly. Fixed strings live in ``templates/*.txt`` package data."""

from __future__ import annotations

import functools
import json
from importlib import resources
from typing import Sequence

from driftcheck.agents.base import MethodKind, RepairPacket, TurnContext
from driftcheck.domains import VOCABULARY, DomainKind, DomainSchema
from driftcheck.generator import render_constraint

Message = dict[str, str]


@functools.lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("driftcheck.agents").joinpath("templates", f"{name}.txt").read_text("utf-8").strip()


def system_prompt(method: MethodKind | str) -> str:
    return template(f"system_{MethodKind(method).value}")


def schema_hint(s: DomainSchema) -> str:
    if s.kind is DomainKind.LOGIC_GRID:
        row = ", ".join(f'"{cat}": "<value>"' for cat in s.category_names)
        shape = "{" + ", ".join(f'"{e}": {{{row}}}' for e in s.entities) + "}"
    elif s.kind is DomainKind.SCHEDULING:
        shape = "{" + ", ".join(f'"{e}": {{"start": <slot>, "duration": <slots>}}' for e in s.entities) + "}"
    else:
        shape = "{" + ", ".join(f'"{e}": <seat>' for e in s.entities) + "}"
    return f"Answer JSON schema: {shape}"


def render_repair_signal(packet: RepairPacket) -> str:
    lines = ["REPAIR REQUIRED"]
    lines.extend(f"{code} : {detail}" for code, detail in packet.triggers)
    if packet.mus:
        lines.append("Minimal conflicting subset:")
        lines.extend(f'{c.key} : "{render_constraint(c)}" (turn {c.turn})' for c in packet.mus)
    lines.append("Return a revised JSON solution that resolves all listed issues.")
    return "\n".join(lines)


def user_message(ctx: TurnContext, ledger_text: str | None = None, repair: RepairPacket | None = None) -> str:
    parts = []
    if ctx.method.uses_ledger:
        text = ctx.ledger_text if ledger_text is None else ledger_text
        parts.append(f"Current ledger:\n{text or '(empty)'}")
    parts.append(f"New constraints from user:\n{ctx.utterance}")
    if repair is not None:
        parts.append(f"Repair signal:\n{render_repair_signal(repair)}")
    parts.append(schema_hint(ctx.schema))
    return "\n\n".join(parts)


def _history(ctx: TurnContext) -> list[Message]:
    out: list[Message] = []
    for user, assistant in ctx.history:
        out.append({"role": "user", "content": user})
        out.append({"role": "assistant", "content": assistant})
    return out


def answer_messages(ctx: TurnContext) -> list[Message]:
    return [{"role": "system", "content": system_prompt(ctx.method)}, *_history(ctx), {"role": "user", "content": user_message(ctx)}]


def repair_messages(ctx: TurnContext, prior_ledger_text: str, packet: RepairPacket, failed_answer: str | None) -> list[Message]:
    msgs = [{"role": "system", "content": system_prompt(ctx.method)}, *_history(ctx)]
    msgs.append({"role": "user", "content": user_message(ctx, prior_ledger_text)})
    if failed_answer:
        msgs.append({"role": "assistant", "content": failed_answer})
    msgs.append({"role": "user", "content": user_message(ctx, prior_ledger_text, packet)})
    return msgs


def truncation_retry_messages(messages: Sequence[Message]) -> list[Message]:
    return [*messages, {"role": "user", "content": template("truncation_retry")}]


def reformat_messages(raw: str) -> list[Message]:
    return [
        {"role": "system", "content": template("system_answer_retry")},
        {"role": "user", "content": f"{template('reformat_retry')}\n\n{raw}"},
    ]


_ARG_HELP = {
    "entity": "<entity>",
    "category": "<category>",
    "value": "<value>",
    "slot": "<slot:int>",
    "duration": "<duration:int>",
    "seat": "<seat:int>",
    "distance": "<distance:int>",
}


def extraction_messages(ctx: TurnContext, answer: str | None) -> list[Message]:
    s = ctx.schema
    vocab = "\n".join(
        f"- {variant}({', '.join(_ARG_HELP[k] for k in kinds)})" for variant, kinds in VOCABULARY[s.kind].items()
    )
    extra = ""
    if s.kind is DomainKind.LOGIC_GRID:
        extra = "Categories: " + json.dumps({name: list(vals) for name, vals in s.categories}) + "\n"
    user = (
        f"Domain: {s.kind.value}\n"
        f"Source turn: {ctx.turn}\n"
        f"Entities: {', '.join(s.entities)}\n"
        f"{extra}"
        f"Latest user message:\n{ctx.utterance}\n\n"
        f"Assistant response:\n{answer or ''}\n\n"
        f"Allowed constraint types (arguments in this order):\n{vocab}\n\n"
        "Rules: use the type names exactly as listed; keep argument order; "
        "include only constraints stated in the latest user message.\n"
        'Respond with JSON only: {"constraints": [{"type": "<type>", "args": [...]}]}'
    )
    return [{"role": "system", "content": template("system_extraction")}, {"role": "user", "content": user}]
