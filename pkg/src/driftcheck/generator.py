"""Seeded corpus generation with a satisfiability gate on every turn.

Every problem draws from its own random substream, keyed by a hash of
(master seed, domain, index, attempt), so problems can be produced in any
order or in parallel and still come out byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import mean
from typing import Any, Iterable, Iterator, Sequence

from driftcheck.domains import (
    VOCABULARY,
    Constraint,
    DomainKind,
    DomainSchema,
    is_tautology,
    validate_constraint,
)
from driftcheck.solver import check_sat

CORPUS_FORMAT = "driftbench-corpus"
CORPUS_VERSION = 1

LOGIC_NAMES = (
    "Avery", "Blake", "Casey", "Drew", "Emery", "Finley", "Harper", "Jordan",
    "Kendall", "Logan", "Morgan", "Parker", "Quinn", "Riley", "Rowan", "Sawyer",
)
LOGIC_CATEGORIES: dict[str, tuple[str, ...]] = {
    "color": ("Red", "Blue", "Green", "Yellow"),
    "pet": ("Cat", "Dog", "Bird", "Fish"),
    "profession": ("Doctor", "Artist", "Teacher", "Chef"),
    "drink": ("Tea", "Coffee", "Juice", "Water"),
    "city": ("Paris", "Tokyo", "Lima", "Oslo"),
    "sport": ("Tennis", "Golf", "Soccer", "Rowing"),
    "instrument": ("Piano", "Violin", "Flute", "Drums"),
}
EVENT_NAMES = (
    "Sync", "Testing", "Meeting", "QA", "Planning", "Design", "Review",
    "Standup", "Demo", "Retro", "Launch", "Training", "Budget", "Interview",
)
PEOPLE_NAMES = (
    "Karen", "Ruby", "Diana", "Tina", "Noah", "Charlie", "Frank", "Alice",
    "Ethan", "Grace", "Henry", "Ivy", "Jack", "Leo", "Mia", "Oscar",
)

# variants whose every instance holds under any complete assignment
ALWAYS_TRIVIAL = frozenset({"neq_attr"})


@dataclass(frozen=True)
class GeneratorConfig:
    master_seed: int = 20250101
    problems_per_domain: int = 340
    domains: tuple[str, ...] = ("logic_grid", "scheduling", "seating")
    min_turns: int = 4
    max_turns: int = 10
    min_new: int = 1
    max_new: int = 3
    resample_budget: int = 50
    regen_retries: int = 20
    dev_per_domain: int | None = None  # default: 20% of problems_per_domain

    def __post_init__(self) -> None:
        object.__setattr__(self, "domains", tuple(DomainKind(d).value for d in self.domains))
        if not 1 <= self.min_turns <= self.max_turns:
            raise ValueError("need 1 <= min_turns <= max_turns")
        if not 1 <= self.min_new <= self.max_new:
            raise ValueError("need 1 <= min_new <= max_new")
        if self.problems_per_domain < 0 or self.resample_budget < 1 or self.regen_retries < 1:
            raise ValueError("counts and budgets must be positive")
        if not 0 <= self.dev_count <= self.problems_per_domain:
            raise ValueError("dev split larger than the domain")

    @property
    def dev_count(self) -> int:
        if self.dev_per_domain is not None:
            return self.dev_per_domain
        return round(self.problems_per_domain * 0.2)

    @property
    def test_count(self) -> int:
        return self.problems_per_domain - self.dev_count

    @classmethod
    def paper_scale(cls, master_seed: int = 20250101) -> GeneratorConfig:
        return cls(master_seed=master_seed, problems_per_domain=340)

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        out["domains"] = list(self.domains)
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> GeneratorConfig:
        obj = dict(obj)
        obj["domains"] = tuple(obj.get("domains", cls.domains))
        return cls(**obj)


@dataclass(frozen=True)
class Turn:
    index: int
    utterance: str
    constraints: tuple[Constraint, ...]


@dataclass(frozen=True)
class Problem:
    id: str
    domain: DomainKind
    schema: DomainSchema
    turns: tuple[Turn, ...]
    split: str = "test"

    @property
    def num_turns(self) -> int:
        return len(self.turns)

    def gold_prefix(self, t: int) -> list[Constraint]:
        """C_{1:t}: every gold constraint introduced up to and including turn ``t``."""
        return [c for turn in self.turns[:t] for c in turn.constraints]

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "domain": self.domain.value,
            "split": self.split,
            "schema": self.schema.to_json(),
            "turns": [
                {
                    "turn": turn.index,
                    "utterance": turn.utterance,
                    "constraints": [c.to_json() for c in turn.constraints],
                }
                for turn in self.turns
            ],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Problem:
        turns = tuple(
            Turn(t["turn"], t["utterance"], tuple(Constraint.from_json(c) for c in t["constraints"]))
            for t in obj["turns"]
        )
        return cls(obj["id"], DomainKind(obj["domain"]), DomainSchema.from_json(obj["schema"]), turns, obj["split"])


@dataclass
class Corpus:
    problems: list[Problem]
    config: GeneratorConfig = field(default_factory=GeneratorConfig)

    def split(self, name: str | None) -> list[Problem]:
        if name in (None, "all"):
            return list(self.problems)
        return [p for p in self.problems if p.split == name]

    def __len__(self) -> int:
        return len(self.problems)


class GenerationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# randomness


def substream(*parts: Any) -> random.Random:
    """Independent RNG keyed by a BLAKE2b digest of ``parts``."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def stable_hash(*parts: Any) -> int:
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# --------------------------------------------------------------------------
# schemas and candidate sampling


def sample_schema(kind: DomainKind, rng: random.Random) -> DomainSchema:
    if kind is DomainKind.LOGIC_GRID:
        names = rng.sample(LOGIC_NAMES, 4)
        cats = rng.sample(sorted(LOGIC_CATEGORIES), 3)
        return DomainSchema.logic_grid(names, {c: LOGIC_CATEGORIES[c] for c in cats})
    if kind is DomainKind.SCHEDULING:
        return DomainSchema.scheduling(rng.sample(EVENT_NAMES, rng.randint(5, 7)), slots=10, max_duration=3)
    people = rng.sample(PEOPLE_NAMES, rng.randint(6, 8))
    shape = "round" if len(people) % 2 else rng.choice(("round", "rectangular"))
    return DomainSchema.seating(people, shape)


def _sample_args(variant: str, s: DomainSchema, rng: random.Random) -> tuple[Any, ...]:
    ents = s.entities
    if variant in ("eq_value", "neq_value"):
        cat = rng.choice(s.category_names)
        return (rng.choice(ents), cat, rng.choice(s.category_values(cat)))
    if variant in ("neq_attr", "lt_attr"):
        a, b = rng.sample(ents, 2)
        return (a, b, rng.choice(s.category_names))
    if variant in ("at_slot", "not_at_slot"):
        return (rng.choice(ents), rng.randint(1, s.slots))
    if variant == "duration_eq":
        return (rng.choice(ents), rng.randint(1, s.max_duration))
    if variant == "start_between":
        lo = rng.randint(1, s.slots - 1)
        return (rng.choice(ents), lo, rng.randint(lo + 1, s.slots))
    if variant in ("at_position", "not_at_position"):
        return (rng.choice(ents), rng.randint(1, s.seats))
    if variant == "min_separation":
        a, b = rng.sample(ents, 2)
        return (a, b, rng.randint(2, s.max_distance))
    # remaining binary relations over two distinct entities
    return tuple(rng.sample(ents, 2))


def sampleable_variants(s: DomainSchema) -> list[str]:
    out = [v for v in VOCABULARY[s.kind] if v not in ALWAYS_TRIVIAL]
    if s.kind is DomainKind.SEATING and s.seats % 2:
        out.remove("opposite")
    return out


def sample_constraint(s: DomainSchema, rng: random.Random, turn: int) -> Constraint:
    variants = sampleable_variants(s)
    while True:
        variant = rng.choice(variants)
        c = Constraint(variant, _sample_args(variant, s, rng), turn)
        if not is_tautology(c, s):
            validate_constraint(c, s)
            return c


# --------------------------------------------------------------------------
# natural-language surface


def _slots(n: int) -> str:
    return f"{n} slot" if n == 1 else f"{n} slots"


def render_constraint(c: Constraint) -> str:
    a = c.args
    v = c.variant
    if v == "eq_value":
        return f"{a[0]}'s {a[1]} is {a[2]}."
    if v == "neq_value":
        return f"{a[0]}'s {a[1]} is not {a[2]}."
    if v == "neq_attr":
        return f"{a[0]} and {a[1]} have different {a[2]} values."
    if v == "lt_attr":
        return f"{a[0]}'s {a[2]} comes before {a[1]}'s {a[2]} in the listed order."
    if v == "at_slot":
        return f"{a[0]} starts at slot {a[1]}."
    if v == "not_at_slot":
        return f"{a[0]} is not available at slot {a[1]}."
    if v == "same_slot":
        return f"{a[0]} and {a[1]} start at the same slot."
    if v == "not_simultaneous":
        return f"{a[0]} and {a[1]} must not start at the same slot."
    if v == "duration_eq":
        return f"{a[0]} lasts {_slots(a[1])}."
    if v == "start_between":
        return f"{a[0]} starts between slot {a[1]} and slot {a[2]}."
    if v == "at_position":
        return f"{a[0]} must sit at position {a[1]}."
    if v == "not_at_position":
        return f"{a[0]} must not sit at position {a[1]}."
    if v == "adjacent":
        return f"{a[0]} must sit next to {a[1]}."
    if v == "not_adjacent":
        return f"{a[0]} must not sit next to {a[1]}."
    if v == "min_separation":
        return f"{a[0]} and {a[1]} must be at least {a[2]} seats apart."
    if v == "opposite":
        return f"{a[0]} must sit directly opposite {a[1]}."
    if v == "left_of":
        return f"{a[0]} must sit at a lower-numbered position than {a[1]}."
    raise ValueError(f"no template for {v}")


def render_setup(s: DomainSchema) -> list[str]:
    lines = [f"Domain: {s.kind.value}", f"Entities: {', '.join(s.entities)}"]
    if s.kind is DomainKind.LOGIC_GRID:
        cats = "; ".join(f"{name} ({' < '.join(values)})" for name, values in s.categories)
        lines.append(f"Categories, each value used exactly once: {cats}")
    elif s.kind is DomainKind.SCHEDULING:
        lines.append(
            f"Time slots: 1-{s.slots}; durations 1-{s.max_duration} slots; "
            "an event with no stated duration lasts 1 slot"
        )
    elif s.shape == "round":
        lines.append(f"Seats: 1-{s.seats} around a round table; seat {s.seats} is next to seat 1")
    else:
        half = s.seats // 2
        lines.append(
            f"Seats: 1-{s.seats} at a rectangular table; seats 1-{half} form one side "
            f"and {half + 1}-{s.seats} the other; neighbours share a side"
        )
    return lines


def render_utterance(new: Sequence[Constraint], s: DomainSchema, turn: int) -> str:
    """One line per constraint; turn 1 opens with the problem setup."""
    lines = render_setup(s) if turn == 1 else []
    lines.extend(render_constraint(c) for c in new)
    return "\n".join(lines)


_N = r"([A-Za-z][\w-]*)"
_I = r"(\d+)"
_PATTERNS: list[tuple[str, re.Pattern[str], tuple[type, ...] | None]] = [
    ("neq_value", re.compile(rf"{_N}'s {_N} is not {_N}\."), (str, str, str)),
    ("eq_value", re.compile(rf"{_N}'s {_N} is {_N}\."), (str, str, str)),
    ("neq_attr", re.compile(rf"{_N} and {_N} have different {_N} values\."), (str, str, str)),
    ("lt_attr", re.compile(rf"{_N}'s {_N} comes before {_N}'s \2 in the listed order\."), None),
    ("at_slot", re.compile(rf"{_N} starts at slot {_I}\."), (str, int)),
    ("not_at_slot", re.compile(rf"{_N} is not available at slot {_I}\."), (str, int)),
    ("not_simultaneous", re.compile(rf"{_N} and {_N} must not start at the same slot\."), (str, str)),
    ("same_slot", re.compile(rf"{_N} and {_N} start at the same slot\."), (str, str)),
    ("duration_eq", re.compile(rf"{_N} lasts {_I} slots?\."), (str, int)),
    ("start_between", re.compile(rf"{_N} starts between slot {_I} and slot {_I}\."), (str, int, int)),
    ("not_at_position", re.compile(rf"{_N} must not sit at position {_I}\."), (str, int)),
    ("at_position", re.compile(rf"{_N} must sit at position {_I}\."), (str, int)),
    ("not_adjacent", re.compile(rf"{_N} must not sit next to {_N}\."), (str, str)),
    ("adjacent", re.compile(rf"{_N} must sit next to {_N}\."), (str, str)),
    ("min_separation", re.compile(rf"{_N} and {_N} must be at least {_I} seats apart\."), (str, str, int)),
    ("opposite", re.compile(rf"{_N} must sit directly opposite {_N}\."), (str, str)),
    ("left_of", re.compile(rf"{_N} must sit at a lower-numbered position than {_N}\."), (str, str)),
]


def extract_reference(utterance: str, s: DomainSchema, turn: int) -> list[Constraint]:
    """Rule-based inverse of ``render_utterance``.

    Lines that match no template (setup framing, chatter) are skipped, as are
    matches that do not validate against the schema.
    """
    out: list[Constraint] = []
    seen: set[str] = set()
    for raw in utterance.splitlines():
        line = raw.strip()
        for variant, pattern, kinds in _PATTERNS:
            m = pattern.fullmatch(line)
            if not m:
                continue
            groups = m.groups()
            if variant == "lt_attr":
                args: tuple[Any, ...] = (groups[0], groups[2], groups[1])
            else:
                args = tuple(k(g) for k, g in zip(kinds, groups))
            try:
                c = Constraint(variant, args, turn)
                validate_constraint(c, s)
            except ValueError:
                break
            if c.key not in seen:
                seen.add(c.key)
                out.append(c)
            break
    return out


# --------------------------------------------------------------------------
# generation


def _try_problem(cfg: GeneratorConfig, kind: DomainKind, rng: random.Random) -> tuple[DomainSchema, list[list[Constraint]]] | None:
    schema = sample_schema(kind, rng)
    target = rng.randint(cfg.min_turns, cfg.max_turns)
    prefix: list[Constraint] = []
    keys: set[str] = set()
    turns: list[list[Constraint]] = []
    for t in range(1, target + 1):
        accepted = None
        for _ in range(cfg.resample_budget):
            want = rng.randint(cfg.min_new, cfg.max_new)
            cands: list[Constraint] = []
            cand_keys: set[str] = set()
            for _ in range(want):
                c = sample_constraint(schema, rng, t)
                # canonical duplicates are dropped before the SAT check
                if c.key in keys or c.key in cand_keys:
                    continue
                cand_keys.add(c.key)
                cands.append(c)
            if cands and check_sat(schema, prefix + cands).sat:
                accepted = cands
                break
        if accepted is None:
            if len(turns) >= cfg.min_turns:
                break  # keep the satisfiable prefix
            return None
        prefix.extend(accepted)
        keys.update(c.key for c in accepted)
        turns.append(accepted)
    return schema, turns


def problem_id(kind: DomainKind | str, index: int) -> str:
    return f"{DomainKind(kind).value}_{index:03d}"


def generate_problem(cfg: GeneratorConfig, d: DomainKind | str, stream_id: int) -> Problem:
    kind = DomainKind(d)
    for attempt in range(cfg.regen_retries):
        rng = substream("problem", cfg.master_seed, kind.value, stream_id, attempt)
        result = _try_problem(cfg, kind, rng)
        if result is None:
            continue
        schema, turns = result
        return Problem(
            problem_id(kind, stream_id),
            kind,
            schema,
            tuple(Turn(t, render_utterance(cs, schema, t), tuple(cs)) for t, cs in enumerate(turns, 1)),
        )
    raise GenerationError(f"{problem_id(kind, stream_id)}: no acceptable trajectory after {cfg.regen_retries} attempts")


def assign_splits(problems: Sequence[Problem], cfg: GeneratorConfig) -> list[Problem]:
    """Within each domain the ``dev_count`` problems with the smallest seeded hash go to dev."""
    out = list(problems)
    by_domain: dict[DomainKind, list[int]] = {}
    for i, p in enumerate(out):
        by_domain.setdefault(p.domain, []).append(i)
    for idxs in by_domain.values():
        ranked = sorted(idxs, key=lambda i: (stable_hash("split", cfg.master_seed, out[i].id), out[i].id))
        dev = set(ranked[: cfg.dev_count])
        for i in idxs:
            p = out[i]
            out[i] = Problem(p.id, p.domain, p.schema, p.turns, "dev" if i in dev else "test")
    return out


def generate_corpus(cfg: GeneratorConfig) -> Corpus:
    problems = [
        generate_problem(cfg, kind, index)
        for kind in cfg.domains
        for index in range(cfg.problems_per_domain)
    ]
    return Corpus(assign_splits(problems, cfg), cfg)


# --------------------------------------------------------------------------
# persistence


def corpus_lines(corpus: Corpus) -> Iterator[str]:
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "config": corpus.config.to_json()}
    yield json.dumps(header, sort_keys=True)
    for p in corpus.problems:
        yield json.dumps(p.to_json(), sort_keys=True)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in corpus_lines(corpus):
            fh.write(line + "\n")


def read_corpus(path: str | Path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("format") != CORPUS_FORMAT or header.get("version") != CORPUS_VERSION:
        raise ValueError(f"{path}: not a version-{CORPUS_VERSION} corpus file")
    cfg = GeneratorConfig.from_json(header["config"]) if "config" in header else GeneratorConfig()
    return Corpus([Problem.from_json(json.loads(ln)) for ln in lines[1:]], cfg)


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class DomainStats:
    domain: str
    test: int
    dev: int
    total: int
    mean_turns: float
    min_turns: int
    max_turns: int
    mean_entities: float
    vocab: int
    mean_final: float


def corpus_stats(c: Corpus | Iterable[Problem]) -> list[DomainStats]:
    problems = c.problems if isinstance(c, Corpus) else list(c)
    rows = []
    for kind in DomainKind:
        ps = [p for p in problems if p.domain is kind]
        if not ps:
            continue
        turns = [p.num_turns for p in ps]
        rows.append(
            DomainStats(
                domain=kind.value,
                test=sum(p.split == "test" for p in ps),
                dev=sum(p.split == "dev" for p in ps),
                total=len(ps),
                mean_turns=mean(turns),
                min_turns=min(turns),
                max_turns=max(turns),
                mean_entities=mean(len(p.schema.entities) for p in ps),
                vocab=len(VOCABULARY[kind]),
                mean_final=mean(len(p.gold_prefix(p.num_turns)) for p in ps),
            )
        )
    return rows


def format_stats(rows: Sequence[DomainStats]) -> str:
    out = ["| Domain | Split | Turns [min,max] | Ent. | Vocab | Final |", "|---|---|---|---|---|---|"]
    for r in rows:
        out.append(
            f"| {r.domain} | {r.test}/{r.dev}/{r.total} | {r.mean_turns:.2f} [{r.min_turns},{r.max_turns}] "
            f"| {r.mean_entities:.2f} | {r.vocab} | {r.mean_final:.2f} |"
        )
    return "\n".join(out)
