from __future__ import annotations

import json
import threading

import httpx
import pytest

from driftcheck.agents import prompts
from driftcheck.agents.base import AgentError, MethodKind, RepairPacket, TurnContext, parse_methods
from driftcheck.agents.http_agent import HttpAgent, HttpConfig, parse_extraction
from driftcheck.agents.mock import MockAgent, MockPolicy, contradicting_twin, format_answer
from driftcheck.domains import Constraint, DomainKind
from driftcheck.generator import GeneratorConfig, generate_corpus
from driftcheck.ledger import Ledger, merge, serialize
from driftcheck.solver import check_sat, close, satisfies
from driftcheck.verifier import parse_answer, strip_fence

CORPUS = generate_corpus(GeneratorConfig(master_seed=5, problems_per_domain=6))


def _ctx(problem, t, method=MethodKind.MUS_REPAIR, ledger_text="") -> TurnContext:
    return TurnContext(
        problem_id=problem.id,
        schema=problem.schema,
        method=MethodKind(method),
        turn=t,
        utterance=problem.turns[t - 1].utterance,
        ledger_text=ledger_text if MethodKind(method).uses_ledger else None,
        gold=tuple(problem.gold_prefix(t)),
        gold_new=problem.turns[t - 1].constraints,
    )


# --------------------------------------------------------------------------
# methods and prompts


def test_method_flags():
    assert [m.value for m in MethodKind] == ["direct", "cot", "ledger_only", "mus_repair"]
    assert [m.uses_ledger for m in MethodKind] == [False, False, True, True]
    assert [m.repairs for m in MethodKind] == [False, False, False, True]
    assert parse_methods("direct, mus_repair") == [MethodKind.DIRECT, MethodKind.MUS_REPAIR]
    with pytest.raises(ValueError):
        parse_methods("magic")


def test_system_prompts_are_fixed_strings():
    assert prompts.system_prompt("direct").endswith("Return only the final JSON solution.")
    assert "at most 3 short bullets" in prompts.system_prompt("cot")
    assert prompts.template("truncation_retry") == (
        "Previous answer was clipped by token limit. Retry with one compact JSON object only: no bullets, no prose, no analysis."
    )
    assert prompts.template("system_answer_retry").startswith("You are a strict JSON formatter.")
    assert "Extract only constraints introduced in the latest user turn." in prompts.template("system_extraction")


def test_ledger_block_only_for_ledger_methods():
    p = CORPUS.problems[0]
    for m in MethodKind:
        msgs = prompts.answer_messages(_ctx(p, 1, m, "[turn 1] x"))
        assert msgs[0]["role"] == "system"
        user = msgs[-1]["content"]
        assert ("Current ledger:" in user) == m.uses_ledger
        assert "New constraints from user:" in user and "Answer JSON schema:" in user


def test_repair_signal_rendering(seating7):
    mus = (Constraint("at_position", ("Karen", 3), 1), Constraint("not_at_position", ("Karen", 3), 2))
    packet = RepairPacket((("unsat_ledger", "conflict"),), mus)
    text = prompts.render_repair_signal(packet)
    lines = text.splitlines()
    assert lines[0] == "REPAIR REQUIRED"
    assert "unsat_ledger : conflict" in lines
    assert 'at_position(karen,3) : "Karen must sit at position 3." (turn 1)' in lines
    assert 'not_at_position(karen,3) : "Karen must not sit at position 3." (turn 2)' in lines


def test_repair_packet_mus_iff_unsat():
    with pytest.raises(ValueError):
        RepairPacket((("unsat_ledger", "x"),), None)
    with pytest.raises(ValueError):
        RepairPacket((("answer_ledger_conflict", "x"),), ())
    assert RepairPacket((("answer_parse_failure", "x"),)).codes == ("answer_parse_failure",)


def test_repair_messages_shape():
    p = CORPUS.problems[0]
    ctx = _ctx(p, 1)
    packet = RepairPacket((("answer_parse_failure", "not_json: x"),))
    msgs = prompts.repair_messages(ctx, "[turn 1] a", packet, "bad answer")
    assert [m["role"] for m in msgs] == ["system", "user", "assistant", "user"]
    assert "Repair signal:\nREPAIR REQUIRED" in msgs[-1]["content"]


def test_extraction_prompt_lists_vocabulary():
    p = next(q for q in CORPUS.problems if q.domain is DomainKind.SEATING)
    msgs = prompts.extraction_messages(_ctx(p, 1), "{}")
    assert "min_separation(<entity>, <entity>, <distance:int>)" in msgs[1]["content"]
    assert '{"constraints": [' in msgs[1]["content"]


# --------------------------------------------------------------------------
# mock agent


@pytest.mark.parametrize("method", list(MethodKind))
def test_oracle_answers_satisfy_gold(method):
    agent = MockAgent(MockPolicy.oracle())
    for p in CORPUS.problems:
        for t in range(1, p.num_turns + 1):
            ctx = _ctx(p, t, method)
            a = parse_answer(agent.generate_answer(ctx).text, p.schema)
            assert satisfies(a, p.gold_prefix(t), p.schema)
            ext = agent.extract_constraints(ctx, None)
            assert ext.constraints == tuple(c.at_turn(t) for c in p.turns[t - 1].constraints)
            assert not ext.empty_flag


def test_cot_answer_has_bullets_and_fence():
    p = CORPUS.problems[0]
    text = MockAgent().generate_answer(_ctx(p, 1, "cot")).text
    assert text.startswith("- ") and "```json" in text
    assert json.loads(strip_fence(text))


def test_drift_plan_violates_one_gold_constraint():
    agent = MockAgent(MockPolicy(p_drift=1.0, repair_competence=0.0))
    hits = 0
    for p in CORPUS.problems:
        for t in range(1, p.num_turns + 1):
            ctx = _ctx(p, t)
            plan = agent.plan_for(ctx)
            if plan.fault is None:
                continue
            hits += 1
            a = parse_answer(agent.generate_answer(ctx).text, p.schema)
            gold = p.gold_prefix(t)
            assert not satisfies(a, gold, p.schema)
            assert satisfies(a, [g for g in gold if g.key != plan.target.key], p.schema)
    assert hits > 0


def test_contra_extraction_makes_ledger_unsat():
    agent = MockAgent(MockPolicy(p_contra=1.0, repair_competence=0.0))
    seen = 0
    for p in CORPUS.problems:
        ctx = _ctx(p, 1)
        plan = agent.plan_for(ctx)
        if plan.fault != "contra":
            continue
        seen += 1
        led = merge(Ledger.empty(p.schema), agent.extract_constraints(ctx, None).constraints, 1)
        assert not check_sat(p.schema, list(led)).sat
    assert seen > 0


def test_contradicting_twins_conflict(seating7, grid, sched):
    import random

    rng = random.Random(0)
    cases = [
        (seating7, Constraint("at_position", ("Karen", 3))),
        (seating7, Constraint("min_separation", ("Karen", "Ruby", 2))),
        (seating7, Constraint("left_of", ("Karen", "Ruby"))),
        (grid, Constraint("lt_attr", ("Drew", "Blake", "pet"))),
        (sched, Constraint("start_between", ("QA", 1, 2))),
        (sched, Constraint("duration_eq", ("QA", 2))),
    ]
    for s, c in cases:
        twin = contradicting_twin(c, s, rng.choice)
        assert not check_sat(s, close([c, twin], s)).sat
    assert contradicting_twin(Constraint("neq_attr", ("Drew", "Blake", "pet")), grid, rng.choice) is None


def test_parse_and_incomplete_faults():
    p = CORPUS.problems[0]
    bad = MockAgent(MockPolicy(p_parse=1.0, repair_competence=0.0)).generate_answer(_ctx(p, 1)).text
    assert parse_answer(bad, p.schema).reason == "not_json"
    inc = MockAgent(MockPolicy(p_incomplete=1.0, repair_competence=0.0)).generate_answer(_ctx(p, 1)).text
    assert len(json.loads(inc)) == len(p.schema.entities) - 1


def test_extract_empty_fault():
    p = CORPUS.problems[0]
    ext = MockAgent(MockPolicy(p_extract_empty=1.0)).extract_constraints(_ctx(p, 1), None)
    assert ext.constraints == () and ext.empty_flag


def test_repair_competence_extremes():
    p = CORPUS.problems[0]
    ctx = _ctx(p, 1)
    packet = RepairPacket((("answer_parse_failure", "x"),))
    never = MockAgent(MockPolicy(p_parse=1.0, repair_competence=0.0))
    always = MockAgent(MockPolicy(p_parse=1.0, repair_competence=1.0))
    for attempt in (1, 2):
        assert parse_answer(never.repair_answer(ctx, "", packet, None, attempt).text, p.schema).reason == "not_json"
        fixed = parse_answer(always.repair_answer(ctx, "", packet, None, attempt).text, p.schema)
        assert satisfies(fixed, p.gold_prefix(1), p.schema)


def test_mock_is_deterministic():
    pol = MockPolicy(0.3, 0.1, 0.05, seed=9)
    a, b = MockAgent(pol), MockAgent(pol)
    for p in CORPUS.problems:
        for t in range(1, p.num_turns + 1):
            assert a.generate_answer(_ctx(p, t)).text == b.generate_answer(_ctx(p, t)).text


def test_policy_validation():
    with pytest.raises(ValueError):
        MockPolicy(p_drift=1.2)
    with pytest.raises(ValueError):
        MockPolicy(p_drift=0.6, p_contra=0.6)
    pol = MockPolicy(0.1, 0.2, seed=3)
    assert MockPolicy.from_json(pol.to_json()) == pol


def test_format_answer_drop():
    p = CORPUS.problems[0]
    a = check_sat(p.schema, []).witness
    assert len(json.loads(format_answer(a, MethodKind.DIRECT, drop=p.schema.entities[0]))) == 3


# --------------------------------------------------------------------------
# HTTP agent against an in-process transport


def _completion(content: str, finish: str = "stop") -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}]}


class Server:
    def __init__(self, replies):
        self.replies = list(replies)
        self.requests: list[dict] = []
        self.headers: list[httpx.Headers] = []
        self.lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self.lock:
            self.requests.append(json.loads(request.content))
            self.headers.append(request.headers)
            item = self.replies.pop(0) if self.replies else _completion("{}")
        if isinstance(item, httpx.Response):
            return item
        if isinstance(item, Exception):
            raise item
        return httpx.Response(200, json=item)


def _agent(server: Server, **kw) -> tuple[HttpAgent, list[float]]:
    sleeps: list[float] = []
    cfg = HttpConfig("http://model.test/v1", "m", **kw)
    client = httpx.Client(transport=httpx.MockTransport(server))
    return HttpAgent(cfg, client=client, sleep=sleeps.append), sleeps


def test_http_request_payload():
    server = Server([_completion('{"a": 1}')])
    agent, _ = _agent(server)
    p = CORPUS.problems[0]
    reply = agent.generate_answer(_ctx(p, 1, "direct"))
    assert reply.text == '{"a": 1}' and not reply.truncated
    body = server.requests[0]
    assert body["temperature"] == 0 and body["model"] == "m"
    assert body["messages"][0]["role"] == "system"


def test_http_retries_with_retry_after():
    server = Server([httpx.Response(429, headers={"retry-after": "3"}), httpx.Response(503), _completion("{}")])
    agent, sleeps = _agent(server, backoff_s=0.5)
    assert agent.complete([{"role": "user", "content": "x"}]) == ("{}", "stop")
    assert sleeps == [3.0, 1.0]


def test_http_gives_up_and_surfaces_error():
    server = Server([httpx.Response(500)] * 3)
    agent, _ = _agent(server, max_retries=2)
    with pytest.raises(AgentError, match="giving up"):
        agent.complete([])
    server = Server([httpx.Response(401, text="nope")])
    agent, sleeps = _agent(server)
    with pytest.raises(AgentError, match="401"):
        agent.complete([])
    assert sleeps == []
    reply = _agent(Server([httpx.Response(400)]))[0].generate_answer(_ctx(CORPUS.problems[0], 1))
    assert reply.text is None and reply.error


def test_http_transport_error_is_retried():
    server = Server([httpx.ConnectError("down"), _completion("{}")])
    agent, sleeps = _agent(server)
    assert agent.complete([])[0] == "{}"
    assert len(sleeps) == 1


def test_http_truncation_retry():
    server = Server([_completion('{"a": ', "length"), _completion('{"a": 1}')])
    agent, _ = _agent(server)
    reply = agent.generate_answer(_ctx(CORPUS.problems[0], 1))
    assert reply.truncated and reply.text == '{"a": 1}' and reply.calls == 2
    assert server.requests[1]["messages"][-1]["content"].startswith("Previous answer was clipped")


def test_http_reformat_retry_on_prose():
    server = Server([_completion("The answer is A at 1."), _completion('{"A": 1}')])
    agent, _ = _agent(server)
    reply = agent.generate_answer(_ctx(CORPUS.problems[0], 1))
    assert reply.text == '{"A": 1}' and reply.calls == 2
    assert server.requests[1]["messages"][0]["content"].startswith("You are a strict JSON formatter.")


def test_http_api_key_header(monkeypatch):
    monkeypatch.setenv("DRIFTCHECK_API_KEY", "sekret")
    server = Server([_completion("{}")])
    cfg = HttpConfig("http://model.test/v1", "m")
    agent = HttpAgent(cfg, client=None)
    agent._client = httpx.Client(transport=httpx.MockTransport(server), headers=agent._client.headers)
    agent.complete([])
    assert server.headers[0]["authorization"] == "Bearer sekret"


def test_http_extraction_parse():
    p = next(q for q in CORPUS.problems if q.domain is DomainKind.SEATING)
    ctx = _ctx(p, 2)
    a, b = p.schema.entities[:2]
    text = json.dumps(
        {
            "constraints": [
                {"type": "adjacent", "args": [a, b]},
                {"type": "adjacent", "args": [b, a]},
                {"type": "teleport", "args": [a]},
                {"type": "at_position", "args": [a, 99]},
            ]
        }
    )
    ext = parse_extraction(text, ctx)
    assert [c.key for c in ext.constraints] == [Constraint("adjacent", (a, b)).key]
    assert ext.constraints[0].turn == 2 and not ext.empty_flag
    assert parse_extraction("", ctx).empty_flag
    assert parse_extraction('{"constraints": [{"type": "teleport", "args": []}]}', ctx).empty_flag


def test_http_extract_via_transport():
    p = CORPUS.problems[0]
    ctx = _ctx(p, 1)
    c = p.turns[0].constraints[0]
    server = Server([_completion("```json\n" + json.dumps({"constraints": [{"type": c.variant, "args": list(c.args)}]}) + "\n```")])
    agent, _ = _agent(server)
    ext = agent.extract_constraints(ctx, "{}")
    assert [x.key for x in ext.constraints] == [c.key]
    assert server.requests[0]["messages"][0]["content"] == prompts.template("system_extraction")


def test_ledger_serialization_feeds_context():
    p = CORPUS.problems[0]
    led = merge(Ledger.empty(p.schema), p.turns[0].constraints, 1)
    msgs = prompts.answer_messages(_ctx(p, 2, "ledger_only", serialize(led)))
    assert serialize(led) in msgs[-1]["content"]
