from __future__ import annotations

import random
from collections import defaultdict
from typing import Any

import pytest

from driftcheck.domains import VOCABULARY, Constraint, DomainKind, DomainSchema

CRITERIA = {
    1: "solver agrees with brute-force enumeration",
    2: "MUS minimality on synthetic UNSAT ledgers",
    3: "generator soundness and corpus structure",
    4: "transcript fixture replay",
    5: "harness neutrality under the oracle agent",
    6: "residual decomposition recovers injected rates",
    7: "statistics calibration",
    8: "bookkeeping identities",
    9: "metrics on reference numbers",
    10: "byte-level determinism",
}

_outcomes: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[crit].append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item: pytest.Item, call: Any):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter: Any) -> None:
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n:>2} NOT RUN  {title}")
            continue
        failed = [nid for nid, o in results if o != "passed"]
        status = "PASS" if not failed else "FAIL"
        tr.write_line(f"criterion {n:>2} {status:<8} {title} ({len(results) - len(failed)}/{len(results)} checks)")
        for nid in failed:
            tr.write_line(f"    failing: {nid}")


# --------------------------------------------------------------------------
# shared helpers


def random_schema(kind: DomainKind, rng: random.Random) -> DomainSchema:
    """Schemas drawn independently of the generator's own sampler."""
    if kind is DomainKind.LOGIC_GRID:
        return DomainSchema.logic_grid(
            ["P0", "P1", "P2", "P3"],
            {"c0": ["a", "b", "c", "d"], "c1": ["e", "f", "g", "h"], "c2": ["i", "j", "k", "l"]},
        )
    if kind is DomainKind.SCHEDULING:
        return DomainSchema.scheduling([f"E{i}" for i in range(rng.randint(5, 7))], slots=10, max_duration=3)
    n = rng.randint(6, 8)
    shape = "round" if n % 2 else rng.choice(["round", "rectangular"])
    return DomainSchema.seating([f"S{i}" for i in range(n)], shape)


def random_constraint(s: DomainSchema, rng: random.Random, entities: Any = None) -> Constraint:
    """Uniform over the full vocabulary, tautologies included."""
    ents = list(entities or s.entities)
    variants = [v for v in VOCABULARY[s.kind] if not (v == "opposite" and s.seats % 2)]
    v = rng.choice(variants)
    args: list[Any] = []
    picked: list[str] = []
    for kind in VOCABULARY[s.kind][v]:
        if kind == "entity":
            e = rng.choice([x for x in ents if x not in picked])
            picked.append(e)
            args.append(e)
        elif kind == "category":
            args.append(rng.choice(s.category_names))
        elif kind == "value":
            args.append(rng.choice(s.category_values(args[1])))
        elif kind == "slot":
            args.append(rng.randint(1, s.slots))
        elif kind == "duration":
            args.append(rng.randint(1, s.max_duration))
        elif kind == "seat":
            args.append(rng.randint(1, s.seats))
        elif kind == "distance":
            args.append(rng.randint(1, s.seats - 1))
    if v == "start_between":
        lo, hi = sorted(rng.sample(range(1, s.slots + 1), 2))
        args[1:] = [lo, hi]
    return Constraint(v, tuple(args))


def random_set(s: DomainSchema, rng: random.Random, lo: int = 1, hi: int = 15) -> list[Constraint]:
    return [random_constraint(s, rng) for _ in range(rng.randint(lo, hi))]


@pytest.fixture
def seating7() -> DomainSchema:
    return DomainSchema.seating(["Diana", "Ruby", "Tina", "Noah", "Charlie", "Frank", "Karen"], "round")


@pytest.fixture
def grid() -> DomainSchema:
    return DomainSchema.logic_grid(
        ["Blake", "Drew", "Avery", "Finley"],
        {
            "color": ["Red", "Blue", "Green", "Yellow"],
            "pet": ["Cat", "Dog", "Bird", "Fish"],
            "profession": ["Doctor", "Artist", "Teacher", "Chef"],
        },
    )


@pytest.fixture
def sched() -> DomainSchema:
    return DomainSchema.scheduling(["Sync", "Testing", "Meeting", "QA", "Planning", "Design"], slots=10, max_duration=3)


@pytest.fixture(scope="session")
def paper_corpus():
    from driftcheck.generator import GeneratorConfig, generate_corpus

    return generate_corpus(GeneratorConfig.paper_scale())
