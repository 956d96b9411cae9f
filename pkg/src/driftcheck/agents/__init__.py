"""Agents that answer turns, extract constraints and respond to repair signals."""

from driftcheck.agents.base import (
    ALL_METHODS,
    Agent,
    AgentError,
    AgentReply,
    ExtractionResult,
    MethodKind,
    RepairPacket,
    TurnContext,
    parse_methods,
)
from driftcheck.agents.http_agent import HttpAgent, HttpConfig, parse_extraction
from driftcheck.agents.mock import MockAgent, MockPolicy, TurnPlan

__all__ = [
    "ALL_METHODS",
    "Agent",
    "AgentError",
    "AgentReply",
    "ExtractionResult",
    "HttpAgent",
    "HttpConfig",
    "MethodKind",
    "MockAgent",
    "MockPolicy",
    "RepairPacket",
    "TurnContext",
    "TurnPlan",
    "parse_extraction",
    "parse_methods",
]
