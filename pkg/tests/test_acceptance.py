"""Acceptance criteria 1-10. The terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import random
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import random_schema, random_set
from driftcheck.agents.base import MethodKind, TurnContext
from driftcheck.agents.mock import MockAgent, MockPolicy
from driftcheck.bruteforce import brute_force_sat
from driftcheck.domains import DomainKind, evaluate
from driftcheck.fixtures import FIXTURES, replay, score
from driftcheck.generator import GeneratorConfig, corpus_lines, corpus_stats, generate_corpus
from driftcheck.harness import AttemptRecord, RunConfig, TraceRow, run_corpus, trace_lines
from driftcheck.metrics import (
    bh_correct,
    bootstrap_ci,
    decompose_residuals,
    exact_sign_test,
    overlap_from_counts,
    relative_lift,
    sign_permutation_test,
)
from driftcheck.solver import check_sat, extract_mus, violated_constraints

ALL = list(MethodKind)
INJECT = (0.3, 0.1, 0.05)  # p_drift, p_contra, p_parse


# --------------------------------------------------------------------------
# 1. solver vs brute force


@pytest.mark.criterion(1)
def test_solver_agrees_with_brute_force():
    started = time.perf_counter()
    rng = random.Random(101)
    for kind in DomainKind:
        verdicts = []
        for _ in range(500):
            s = random_schema(kind, rng)
            cs = random_set(s, rng, 1, 15)
            got = check_sat(s, cs)
            ref = brute_force_sat(s, cs)
            assert got.sat == ref.sat, (kind, [c.key for c in cs])
            if got.sat:
                assert all(evaluate(c, got.witness, s) for c in cs)
            verdicts.append(got.sat)
        assert 0 < sum(verdicts) < 500, f"{kind}: only one verdict seen"
    assert time.perf_counter() - started < 60


# --------------------------------------------------------------------------
# 2. MUS minimality


@pytest.mark.criterion(2)
def test_mus_minimality():
    started = time.perf_counter()
    rng = random.Random(202)
    for kind in DomainKind:
        found = 0
        while found < 200:
            s = random_schema(kind, rng)
            cs = random_set(s, rng, 2, 15)
            if check_sat(s, cs).sat:
                continue
            found += 1
            mus = extract_mus(s, cs)
            ids = [id(c) for c in cs]
            assert all(id(c) in ids for c in mus)
            # judged by the brute-force oracle, not the solver under test
            assert not brute_force_sat(s, mus).sat
            for i in range(len(mus)):
                assert brute_force_sat(s, mus[:i] + mus[i + 1 :]).sat
    assert time.perf_counter() - started < 120


# --------------------------------------------------------------------------
# 3. generator soundness


@pytest.mark.criterion(3)
def test_every_gold_prefix_is_satisfiable(paper_corpus):
    assert len(paper_corpus) == 1020
    for p in paper_corpus.problems:
        for t in range(1, p.num_turns + 1):
            assert check_sat(p.schema, p.gold_prefix(t)).sat, (p.id, t)


@pytest.mark.criterion(3)
def test_final_gold_sets_satisfiable_by_brute_force(paper_corpus):
    for p in paper_corpus.problems:
        assert brute_force_sat(p.schema, p.gold_prefix(p.num_turns)).sat, p.id


@pytest.mark.criterion(3)
def test_corpus_structure_bands(paper_corpus):
    rows = {r.domain: r for r in corpus_stats(paper_corpus)}
    assert set(rows) == {"logic_grid", "scheduling", "seating"}
    for r in rows.values():
        assert (r.test, r.dev) == (272, 68)
        assert 6.5 <= r.mean_turns <= 7.5, r
        assert 10 <= r.mean_final <= 14, r
    assert all(len(p.schema.entities) == 4 for p in paper_corpus.problems if p.domain is DomainKind.LOGIC_GRID)
    assert abs(rows["scheduling"].mean_entities - 5.92) <= 0.5
    assert abs(rows["seating"].mean_entities - 7.01) <= 0.5


# --------------------------------------------------------------------------
# 4. fixtures


@pytest.mark.criterion(4)
@pytest.mark.parametrize(
    "case, expected",
    [
        ("scheduling_249", {"direct": (1, 4), "mus_repair": (4, 4)}),
        ("logic_grid_021", {"direct": (0, 5), "mus_repair": (5, 5)}),
        ("seating_062", {"direct": (1, 4), "mus_repair": (3, 4)}),
    ],
)
def test_fixture_replay(case, expected):
    started = time.perf_counter()
    results = replay(FIXTURES[case])
    assert all(r.ok for r in results), [(r.method, r.turn) for r in results if not r.ok]
    for method, pattern in expected.items():
        assert score(results, case, method) == pattern
    assert time.perf_counter() - started < 5


@pytest.mark.criterion(4)
def test_wrap_adjacency_is_the_turn4_failure():
    case = FIXTURES["seating_062"]
    cell = next(r for r in replay(case) if r.method == "mus_repair" and r.turn == 4)
    assert not cell.got
    broken = violated_constraints(cell.verdict.assignment, case.problem().gold_prefix(4), case.schema)
    assert [c.key for c in broken] == ["not_adjacent(charlie,frank)"]
    assert cell.verdict.assignment.values["Charlie"] == 7 and cell.verdict.assignment.values["Frank"] == 1


# --------------------------------------------------------------------------
# 5. oracle neutrality


def _fifty() -> list:
    return generate_corpus(GeneratorConfig(master_seed=505, problems_per_domain=17)).problems[:50]


def _oracle_rows(problems) -> list[TraceRow]:
    return run_corpus(problems, ALL, [MockAgent(MockPolicy.oracle())], RunConfig(k=2))


@pytest.fixture(scope="module")
def oracle_run():
    problems = _fifty()
    started = time.perf_counter()
    rows = _oracle_rows(problems)
    return problems, rows, time.perf_counter() - started


@pytest.mark.criterion(5)
def test_oracle_is_perfect_under_every_method(oracle_run):
    problems, rows, elapsed = oracle_run
    assert len(problems) == 50
    assert len(rows) == 4 * sum(p.num_turns for p in problems)
    for m in ALL:
        mine = [r for r in rows if r.method == m.value]
        assert 100.0 * sum(r.answer_correct for r in mine) / len(mine) == 100.0
    assert all(r.triggers == () and r.attempts == 0 for r in rows)
    assert all(a.triggers == () for r in rows for a in r.attempt_records)
    assert elapsed < 60


# --------------------------------------------------------------------------
# 6. decomposition recovery


def _five_hundred() -> list:
    return generate_corpus(GeneratorConfig(master_seed=606, problems_per_domain=167)).problems[:500]


def _injected_rows(problems, competence: float) -> list[TraceRow]:
    agent = MockAgent(MockPolicy(*INJECT, repair_competence=competence, seed=6))
    return run_corpus(problems, ["mus_repair"], [agent], RunConfig(k=2))


@pytest.fixture(scope="module")
def injected_run():
    problems = _five_hundred()
    started = time.perf_counter()
    rows0 = _injected_rows(problems, 0.0)
    rows1 = _injected_rows(problems, 1.0)
    return problems, rows0, rows1, time.perf_counter() - started


def _implied_counts(rows: list[TraceRow]) -> dict[str, float]:
    """Expected residual counts per channel given only the injection rates.

    A contradiction poisons the ledger for every later turn, so any later
    fault turn lands in the UNSAT channel as well.
    """
    p_d, p_c, p_p = INJECT
    out = {"drift": 0.0, "unsat": 0.0, "other": 0.0}
    for r in rows:
        clean_so_far = (1 - p_c) ** (r.turn - 1)
        out["drift"] += p_d * clean_so_far
        out["other"] += p_p * clean_so_far
        out["unsat"] += p_c + (p_d + p_p) * (1 - clean_so_far)
    return out


@pytest.mark.criterion(6)
def test_channel_shares_match_injection(injected_run):
    _, rows0, _, elapsed = injected_run
    (dec,) = decompose_residuals(rows0).values()
    implied = _implied_counts(rows0)
    total = sum(implied.values())
    for part in ("drift", "unsat", "other"):
        assert abs(dec.share(part) - 100 * implied[part] / total) <= 3.0, (part, dec)
    assert elapsed < 300


@pytest.mark.criterion(6)
def test_channels_match_realized_fault_plans(injected_run):
    """Row-level: the measured channel equals the one implied by the mock's realized plan."""
    problems, rows0, _, _ = injected_run
    planner = MockAgent(MockPolicy(*INJECT, repair_competence=0.0, seed=6))
    by_key = {(r.problem_id, r.turn): r for r in rows0}
    for p in problems:
        poisoned = False
        for t in range(1, p.num_turns + 1):
            ctx = TurnContext(
                problem_id=p.id,
                schema=p.schema,
                method=MethodKind.MUS_REPAIR,
                turn=t,
                utterance=p.turns[t - 1].utterance,
                gold=tuple(p.gold_prefix(t)),
                gold_new=p.turns[t - 1].constraints,
            )
            fault = planner.plan_for(ctx).fault
            poisoned = poisoned or fault == "contra"
            row = by_key[(p.id, t)]
            assert row.answer_correct == (fault is None), (p.id, t, fault)
            assert row.z3_sat == (not poisoned), (p.id, t)
            if fault == "drift" and not poisoned:
                assert "answer_ledger_conflict" in row.triggers


@pytest.mark.criterion(6)
def test_competent_repair_removes_residuals(injected_run):
    _, rows0, rows1, _ = injected_run
    before = sum(not r.answer_correct for r in rows0)
    after = sum(not r.answer_correct for r in rows1)
    assert before > 0
    assert (before - after) / before >= 0.90


# --------------------------------------------------------------------------
# 7. statistics calibration


@pytest.mark.criterion(7)
def test_bootstrap_coverage():
    rng = np.random.default_rng(7)
    n, turns, pa, pb = 60, 7, 0.55, 0.45
    hits = 0
    sims = 1000
    for i in range(sims):
        d = rng.binomial(turns, pa, n) / turns - rng.binomial(turns, pb, n) / turns
        lo, hi = bootstrap_ci(d, B=2000, seed=i)
        hits += lo <= pa - pb <= hi
    coverage = 100.0 * hits / sims
    assert 93.5 <= coverage <= 96.5, coverage


@pytest.mark.criterion(7)
def test_sign_test_uniform_under_null():
    from scipy import stats

    rng = np.random.default_rng(8)
    ps = [sign_permutation_test(rng.normal(size=30), R=999, seed=i) for i in range(1000)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


@pytest.mark.criterion(7)
@pytest.mark.parametrize("n", [1, 2, 5, 10, 14])
def test_exact_sign_test_matches_enumeration(n):
    rng = np.random.default_rng(n)
    x = np.round(rng.normal(0.2, 1, size=n), 3)
    obs = abs(x.mean())
    hits = sum(abs(np.dot(s, x) / n) >= obs - 1e-12 for s in itertools.product((1, -1), repeat=n))
    assert exact_sign_test(x) == pytest.approx(hits / 2**n)


@pytest.mark.criterion(7)
def test_monte_carlo_tracks_exact_at_n20():
    x = np.random.default_rng(20).normal(0.25, 1, size=20)
    exact = exact_sign_test(x)
    mc = sign_permutation_test(x, R=20_000, seed=1)
    assert abs(mc - exact) <= 4 * np.sqrt(exact * (1 - exact) / 20_000) + 1e-4


@pytest.mark.criterion(7)
def test_bh_worked_example():
    assert bh_correct([0.01, 0.02, 0.04]) == pytest.approx([0.03, 0.03, 0.04], abs=1e-12)


# --------------------------------------------------------------------------
# 8. bookkeeping


@pytest.mark.criterion(8)
def test_test_split_turn_total(paper_corpus):
    total = sum(p.num_turns for p in paper_corpus.split("test"))
    assert total == 5672


@pytest.mark.criterion(8)
def test_reference_turn_identities():
    assert 4 * 5672 == 22688
    assert 4 * 22688 == 90752


# --------------------------------------------------------------------------
# 9. metrics on reference numbers


def _synthetic(agent: str, drift: int, unsat: int, other: int) -> list[TraceRow]:
    rows = []
    kinds = [("drift", True, ("answer_ledger_conflict",))] * drift
    kinds += [("unsat", False, ("unsat_ledger",))] * unsat
    kinds += [("other", True, ("answer_parse_failure",))] * other
    for i, (channel, sat, trig) in enumerate(kinds):
        rec = AttemptRecord(0, trig, sat, channel, False, True, True)
        rows.append(
            TraceRow(f"p{i // 10}", "seating", "mus_repair", agent, 1 + i % 10, 0, sat, trig, channel, False, False, True, True, attempt_records=(rec,))
        )
    return rows


@pytest.mark.criterion(9)
@pytest.mark.parametrize(
    "agent, counts, shares",
    [
        ("agent_a", (3970, 0, 0), (100.0, 0.0, 0.0)),
        ("agent_b", (3438, 66, 0), (98.1, 1.9, 0.0)),
        ("agent_c", (1774, 1, 0), (99.9, 0.1, 0.0)),
        ("agent_d", (2115, 2, 0), (99.9, 0.1, 0.0)),
    ],
)
def test_decomposition_on_reference_counts(agent, counts, shares):
    started = time.perf_counter()
    (dec,) = decompose_residuals(_synthetic(agent, *counts)).values()
    assert (dec.drift, dec.unsat, dec.other) == counts
    assert tuple(round(dec.share(k), 1) for k in ("drift", "unsat", "other")) == shares
    assert time.perf_counter() - started < 5


@pytest.mark.criterion(9)
@pytest.mark.parametrize(
    "acc, rho",
    [
        ({"direct": 28.19, "cot": 27.91, "ledger_only": 25.23, "mus_repair": 30.01}, 6.4),
        ({"direct": 51.80, "cot": 50.35, "ledger_only": 53.70, "mus_repair": 68.71}, 27.9),
        ({"direct": 52.12, "cot": 53.95, "ledger_only": 50.02, "mus_repair": 62.68}, 16.2),
    ],
)
def test_relative_lift_on_reference_accuracies(acc, rho):
    assert abs(100 * relative_lift(acc) - rho) <= 0.1


@pytest.mark.criterion(9)
def test_overlap_on_reference_counts():
    """Residual sets of 3,970 and 3,438 + 66 errors sharing 3,143 rows."""
    ov = overlap_from_counts(3970, 3438 + 66, 3143)
    assert (round(ov.jaccard, 3), round(ov.share_of_a, 3), round(ov.share_of_b, 3)) == (0.726, 0.792, 0.897)


# --------------------------------------------------------------------------
# 10. determinism


def _sha(lines) -> str:
    h = hashlib.sha256()
    for ln in lines:
        h.update(ln.encode() + b"\n")
    return h.hexdigest()


@pytest.mark.criterion(10)
def test_corpus_is_byte_identical(paper_corpus):
    again = generate_corpus(GeneratorConfig.paper_scale())
    assert _sha(corpus_lines(again)) == _sha(corpus_lines(paper_corpus))


@pytest.mark.criterion(10)
def test_oracle_trace_is_byte_identical(oracle_run):
    _, rows, _ = oracle_run
    assert _sha(trace_lines(_oracle_rows(_fifty()))) == _sha(trace_lines(rows))


@pytest.mark.criterion(10)
def test_injected_traces_are_byte_identical(injected_run):
    problems, rows0, rows1, _ = injected_run
    assert _sha(trace_lines(_injected_rows(problems, 0.0))) == _sha(trace_lines(rows0))
    assert _sha(trace_lines(_injected_rows(_five_hundred(), 1.0))) == _sha(trace_lines(rows1))


@pytest.mark.criterion(10)
def test_cli_output_independent_of_hash_seed(tmp_path):
    """Separate interpreters with different string-hash seeds write identical files."""
    policy = tmp_path / "policy.json"
    policy.write_text(json.dumps(dict(zip(("p_drift", "p_contra", "p_parse"), INJECT))))
    digests = []
    for hash_seed in ("1", "2"):
        out = tmp_path / hash_seed
        out.mkdir()
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        cmds = [
            ["generate", "--seed", "909", "--count-per-domain", "20", "--out", str(out / "c.jsonl")],
            ["run", "--corpus", str(out / "c.jsonl"), "--split", "all", "--mock-policy", str(policy), "--out", str(out / "t.jsonl")],
        ]
        for cmd in cmds:
            proc = subprocess.run([sys.executable, "-m", "driftcheck", *cmd], env=env, capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
        digests.append([hashlib.sha256((out / f).read_bytes()).hexdigest() for f in ("c.jsonl", "t.jsonl")])
    assert digests[0] == digests[1]
