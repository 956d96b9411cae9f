"""Client for OpenAI-compatible ``/chat/completions`` endpoints."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

import httpx

from driftcheck.agents import prompts
from driftcheck.agents.base import AgentError, AgentReply, ExtractionResult, RepairPacket, TurnContext
from driftcheck.domains import Constraint, ConstraintError, validate_constraint
from driftcheck.verifier import strip_fence

log = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "DRIFTCHECK_API_KEY"
_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class HttpConfig:
    endpoint: str
    model: str
    api_key_env: str = DEFAULT_KEY_ENV
    max_tokens: int = 2048
    timeout_s: float = 120.0
    max_retries: int = 4
    backoff_s: float = 1.0
    truncation_retries: int = 2
    reformat_retries: int = 1
    max_in_flight: int = 8


def _retry_after(resp: httpx.Response, fallback: float) -> float:
    value = resp.headers.get("retry-after")
    if value is None:
        return fallback
    try:
        return max(0.0, float(value))
    except ValueError:
        return fallback


def _loads_object(text: str | None) -> Any:
    if text is None:
        return None
    try:
        return json.loads(strip_fence(text))
    except json.JSONDecodeError:
        return None


class HttpAgent:
    """Temperature-0 chat agent; safe to share between worker threads."""

    def __init__(
        self,
        config: HttpConfig,
        agent_id: str | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.agent_id = agent_id or config.model
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=config.timeout_s, headers=headers)
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    # -- transport --------------------------------------------------------

    def complete(self, messages: list[dict[str, str]]) -> tuple[str, str]:
        """One chat completion; returns (content, finish_reason)."""
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
            "max_tokens": self.config.max_tokens,
        }
        delay = self.config.backoff_s
        last = ""
        for attempt in range(self.config.max_retries + 1):
            try:
                with self._gate:
                    resp = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                wait = delay
            else:
                if resp.status_code == 200:
                    try:
                        choice = resp.json()["choices"][0]
                        return choice["message"].get("content") or "", choice.get("finish_reason") or "stop"
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise AgentError(f"malformed completion payload: {exc}") from exc
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in _RETRY_STATUS:
                    raise AgentError(last)
                wait = _retry_after(resp, delay)
            if attempt < self.config.max_retries:
                log.warning("retrying after %s (%.1fs)", last, wait)
                self._sleep(wait)
                delay *= 2
        raise AgentError(f"giving up after {self.config.max_retries + 1} tries: {last}")

    def _answer(self, messages: list[dict[str, str]]) -> AgentReply:
        calls = 0
        truncated = False
        try:
            text, finish = self.complete(messages)
            calls += 1
            retries = 0
            while finish == "length" and retries < self.config.truncation_retries:
                truncated = True
                retries += 1
                text, finish = self.complete(prompts.truncation_retry_messages(messages))
                calls += 1
            if finish == "length":
                truncated = True
            for _ in range(self.config.reformat_retries):
                if _loads_object(text) is not None:
                    break
                text, finish = self.complete(prompts.reformat_messages(text))
                calls += 1
        except AgentError as exc:
            return AgentReply(None, truncated=truncated, error=str(exc), calls=calls)
        return AgentReply(text, truncated=truncated, calls=calls)

    # -- agent interface --------------------------------------------------

    def generate_answer(self, ctx: TurnContext) -> AgentReply:
        return self._answer(prompts.answer_messages(ctx))

    def repair_answer(
        self,
        ctx: TurnContext,
        prior_ledger_text: str,
        packet: RepairPacket,
        failed_answer: str | None,
        attempt: int,
    ) -> AgentReply:
        return self._answer(prompts.repair_messages(ctx, prior_ledger_text, packet, failed_answer))

    def extract_constraints(self, ctx: TurnContext, answer: str | None, attempt: int = 0) -> ExtractionResult:
        try:
            text, _ = self.complete(prompts.extraction_messages(ctx, answer))
        except AgentError as exc:
            return ExtractionResult((), empty_flag=True, error=str(exc))
        return parse_extraction(text, ctx)


def parse_extraction(text: str | None, ctx: TurnContext) -> ExtractionResult:
    """Strictly decode ``{"constraints": [...]}``; invalid items are dropped."""
    obj = _loads_object(text)
    if not isinstance(obj, dict) or not isinstance(obj.get("constraints"), list):
        return ExtractionResult((), empty_flag=True, error="reply is not a constraints object")
    out: list[Constraint] = []
    seen: set[str] = set()
    for item in obj["constraints"]:
        if not isinstance(item, dict):
            continue
        try:
            c = Constraint.from_json({"type": item.get("type"), "args": item.get("args"), "turn": ctx.turn})
            validate_constraint(c, ctx.schema)
        except (ConstraintError, ValueError, TypeError):
            continue
        if c.key not in seen:
            seen.add(c.key)
            out.append(c)
    return ExtractionResult(tuple(out), empty_flag=not out)
