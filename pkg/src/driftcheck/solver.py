"""Finite-domain satisfiability, assignment injection, MUS and drift localization.

The engine is chronological backtracking with forward checking over each
independent component of the constraint graph. The next variable is the one
with the smallest remaining domain (ties: most constrained, then schema order)
and values are tried in declaration order, so witnesses and MUS results are
deterministic for a fixed input order.

Scheduling uses closed-world durations: an event with no ``duration_eq``
constraint in the checked set lasts exactly one slot. Longer durations can
only make a set of (positive) constraints harder to satisfy, so this never
changes a SAT/UNSAT verdict. It does matter when an answer assigns a longer
duration nobody asked for, which then violates the implicit default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from driftcheck.domains import (
    Assignment,
    Constraint,
    DomainKind,
    DomainSchema,
    IncompleteAssignmentError,
    Var,
    evaluate,
    schema_validate,
    scope_and_predicate,
    validate_constraint,
)


class MusContractError(ValueError):
    """extract_mus was called on a satisfiable set."""


@dataclass(frozen=True)
class SatResult:
    sat: bool
    witness: Assignment | None = None

    def __bool__(self) -> bool:
        return self.sat


def variables(schema: DomainSchema) -> list[Var]:
    if schema.kind is DomainKind.LOGIC_GRID:
        return [(e, cat) for e in schema.entities for cat in schema.category_names]
    return list(schema.entities)


def implicit_defaults(constraints: Iterable[Constraint], schema: DomainSchema) -> list[Constraint]:
    """``duration_eq(e, 1)`` (turn 0) for every event the set leaves unconstrained."""
    if schema.kind is not DomainKind.SCHEDULING:
        return []
    timed = {c.args[0] for c in constraints if c.variant == "duration_eq"}
    return [Constraint("duration_eq", (e, 1), 0) for e in schema.entities if e not in timed]


def close(constraints: Iterable[Constraint], schema: DomainSchema) -> list[Constraint]:
    constraints = list(constraints)
    return constraints + implicit_defaults(constraints, schema)


def _initial_domains(schema: DomainSchema, positive: Sequence[Constraint]) -> dict[Var, list[Any]] | None:
    if schema.kind is DomainKind.LOGIC_GRID:
        return {(e, cat): list(vals) for e in schema.entities for cat, vals in schema.categories}
    if schema.kind is DomainKind.SEATING:
        return {e: list(range(1, schema.seats + 1)) for e in schema.entities}
    durations: dict[str, set[int]] = {}
    for c in positive:
        if c.variant == "duration_eq":
            durations.setdefault(c.args[0], set()).add(c.args[1])
    domains = {}
    for e in schema.entities:
        ds = durations.get(e, {1})
        if len(ds) > 1:
            return None
        (d,) = ds
        domains[e] = [(start, d) for start in range(1, schema.slots - d + 2)]
    return domains


def _alldiff_groups(schema: DomainSchema) -> dict[Var, list[Var]]:
    if schema.kind is DomainKind.LOGIC_GRID:
        return {
            (e, cat): [(o, cat) for o in schema.entities if o != e]
            for e in schema.entities
            for cat in schema.category_names
        }
    if schema.kind is DomainKind.SEATING:
        return {e: [o for o in schema.entities if o != e] for e in schema.entities}
    return {}


def _solve(
    schema: DomainSchema,
    positive: Sequence[Constraint],
    negative: Sequence[Constraint] = (),
) -> dict[Var, Any] | None:
    domains = _initial_domains(schema, positive)
    if domains is None:
        return None
    compiled = []
    for c in positive:
        compiled.append(scope_and_predicate(c, schema))
    for c in negative:
        scope, pred = scope_and_predicate(c, schema)
        compiled.append((scope, lambda *xs, _p=pred: not _p(*xs)))

    by_var: dict[Var, list[tuple[tuple[Var, ...], Any]]] = {v: [] for v in domains}
    for scope, pred in compiled:
        if len(scope) == 1:
            (v,) = scope
            domains[v] = [x for x in domains[v] if pred(x)]
            if not domains[v]:
                return None
        else:
            for v in set(scope):
                by_var[v].append((scope, pred))
    groups = _alldiff_groups(schema)
    order = variables(schema)
    index = {v: i for i, v in enumerate(order)}
    degree = {v: len(cs) for v, cs in by_var.items()}
    assigned: dict[Var, Any] = {}

    def forward(var: Var, val: Any, doms: dict[Var, list[Any]]) -> dict[Var, list[Any]] | None:
        new = dict(doms)
        for other in groups.get(var, ()):
            if other not in assigned and val in new[other]:
                new[other] = [x for x in new[other] if x != val]
                if not new[other]:
                    return None
        for scope, pred in by_var[var]:
            open_vars = [w for w in scope if w not in assigned]
            if not open_vars:
                if not pred(*(assigned[w] for w in scope)):
                    return None
            elif len(open_vars) == 1:
                (w,) = open_vars
                i = scope.index(w)
                args = [assigned.get(x) for x in scope]
                keep = []
                for x in new[w]:
                    args[i] = x
                    if pred(*args):
                        keep.append(x)
                if not keep:
                    return None
                new[w] = keep
        return new

    def backtrack(todo: list[Var], doms: dict[Var, list[Any]]) -> bool:
        if not todo:
            return True
        # smallest domain first, then most constrained, then schema order
        var = min(todo, key=lambda v: (len(doms[v]), -degree[v], index[v]))
        rest = [v for v in todo if v != var]
        for val in doms[var]:
            assigned[var] = val
            new = forward(var, val, doms)
            if new is not None and backtrack(rest, new):
                return True
            del assigned[var]
        return False

    # variables that share no constraint or all-different group are solved independently
    for component in _components(order, compiled, groups):
        if not backtrack(component, domains):
            return None
    return {v: assigned[v] for v in order}


def _components(order: list[Var], compiled: Sequence[tuple[tuple[Var, ...], Any]], groups: dict[Var, list[Var]]) -> list[list[Var]]:
    parent = {v: v for v in order}

    def find(v: Var) -> Var:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    def union(a: Var, b: Var) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb, key=order.index)] = min(ra, rb, key=order.index)

    for scope, _ in compiled:
        for w in scope[1:]:
            union(scope[0], w)
    for v, others in groups.items():
        for o in others:
            union(v, o)
    comps: dict[Var, list[Var]] = {}
    for v in order:
        comps.setdefault(find(v), []).append(v)
    return list(comps.values())


def check_sat(
    s: DomainSchema,
    constraints: Iterable[Constraint],
    *,
    violating: Iterable[Constraint] = (),
) -> SatResult:
    """Decide satisfiability of ``constraints`` over the schema's assignment space.

    ``violating`` lists constraints that must all be *false* in the witness;
    the mock agents use it to build answers that drift on purpose.
    """
    positive = list(constraints)
    negative = list(violating)
    for c in positive + negative:
        validate_constraint(c, s)
    found = _solve(s, positive, negative)
    if found is None:
        return SatResult(False)
    return SatResult(True, Assignment.from_variables(s, found))


def _require_complete(a: Assignment, s: DomainSchema) -> None:
    report = schema_validate(a, s)
    if not report.ok:
        raise IncompleteAssignmentError(f"complete assignment required ({report.describe()})")


def assignment_to_constraints(a: Assignment, s: DomainSchema) -> list[Constraint]:
    """The atoms that pin ``a`` exactly (turn 0: they are not ledger entries)."""
    _require_complete(a, s)
    out = []
    if s.kind is DomainKind.LOGIC_GRID:
        for e in s.entities:
            for cat in s.category_names:
                out.append(Constraint("eq_value", (e, cat, a.values[e][cat]), 0))
    elif s.kind is DomainKind.SCHEDULING:
        for e in s.entities:
            start, dur = a.values[e]
            out.append(Constraint("at_slot", (e, start), 0))
            out.append(Constraint("duration_eq", (e, dur), 0))
    else:
        for e in s.entities:
            out.append(Constraint("at_position", (e, a.values[e]), 0))
    return out


def satisfies(a: Assignment, constraints: Iterable[Constraint], s: DomainSchema) -> bool:
    """SAT(S ∪ Φ(a)) with S closed under the implicit duration default."""
    phi = assignment_to_constraints(a, s)
    return check_sat(s, close(constraints, s) + phi).sat


def violated_constraints(a: Assignment, ledger: Iterable[Constraint], s: DomainSchema) -> list[Constraint]:
    """Ledger entries (plus implicit defaults) that ``a`` breaks, in ledger order."""
    _require_complete(a, s)
    return [c for c in close(ledger, s) if not evaluate(c, a, s)]


def extract_mus(s: DomainSchema, constraints: Sequence[Constraint]) -> list[Constraint]:
    """Deletion-based MUS: drop each member in turn if the rest stays UNSAT."""
    core = list(constraints)
    if check_sat(s, core).sat:
        raise MusContractError("extract_mus needs an unsatisfiable constraint set")
    i = 0
    while i < len(core):
        trial = core[:i] + core[i + 1 :]
        if check_sat(s, trial).sat:
            i += 1
        else:
            core = trial
    return core


def brute_force_sat(s: DomainSchema, constraints: Iterable[Constraint]) -> SatResult:
    from driftcheck.bruteforce import brute_force_sat as _bf

    return _bf(s, constraints)
