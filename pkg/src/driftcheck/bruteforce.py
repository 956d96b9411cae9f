"""Exhaustive-enumeration oracle used to cross-check the backtracking solver.

Semantics are re-implemented here over numpy arrays of whole assignment
spaces, so this module shares no predicate code with ``domains``/``solver``.
"""

from __future__ import annotations

import functools
import itertools
from typing import Iterable

import numpy as np

from driftcheck.domains import Assignment, Constraint, DomainKind, DomainSchema, validate_constraint
from driftcheck.solver import SatResult

MAX_CANDIDATES = 10**7
_CHUNK = 1 << 20


class SearchSpaceTooLarge(ValueError):
    def __init__(self, bound: int):
        super().__init__(f"assignment space of {bound} candidates exceeds the {MAX_CANDIDATES} limit")
        self.bound = bound


@functools.lru_cache(maxsize=None)
def _perms(n: int) -> np.ndarray:
    out = np.array(list(itertools.permutations(range(n))), dtype=np.int8)
    out.setflags(write=False)
    return out


def _logic_space(s: DomainSchema) -> dict[str, np.ndarray]:
    perms = _perms(4)  # perms[k, e] = value index held by entity e
    grid = np.indices((24, 24, 24)).reshape(3, -1)
    return {cat: perms[grid[i]] for i, cat in enumerate(s.category_names)}


def _logic_mask(s: DomainSchema, cs: list[Constraint], table: dict[str, np.ndarray]) -> np.ndarray:
    ent = {e: i for i, e in enumerate(s.entities)}
    ok = np.ones(24**3, dtype=bool)
    for c in cs:
        a = c.args
        if c.variant in ("eq_value", "neq_value"):
            col = table[a[1]][:, ent[a[0]]]
            hit = col == s.category_values(a[1]).index(a[2])
            ok &= hit if c.variant == "eq_value" else ~hit
        else:
            x = table[a[2]][:, ent[a[0]]]
            y = table[a[2]][:, ent[a[1]]]
            ok &= (x != y) if c.variant == "neq_attr" else (x < y)
    return ok


def _logic(s: DomainSchema, cs: list[Constraint]) -> SatResult:
    table = _logic_space(s)
    idx = np.flatnonzero(_logic_mask(s, cs, table))
    if idx.size == 0:
        return SatResult(False)
    k = idx[0]
    values = {
        e: {cat: s.category_values(cat)[int(table[cat][k, i])] for cat in s.category_names}
        for i, e in enumerate(s.entities)
    }
    return SatResult(True, Assignment(s.kind, values))


def _seating_space(s: DomainSchema) -> np.ndarray:
    return _perms(s.seats).astype(np.int16) + 1


def _seating_mask(s: DomainSchema, cs: list[Constraint], seats: np.ndarray) -> np.ndarray:
    p = s.seats
    ent = {e: i for i, e in enumerate(s.entities)}
    half = p // 2
    ok = np.ones(seats.shape[0], dtype=bool)
    for c in cs:
        a = c.args
        x = seats[:, ent[a[0]]]
        if c.variant == "at_position":
            ok &= x == a[1]
            continue
        if c.variant == "not_at_position":
            ok &= x != a[1]
            continue
        y = seats[:, ent[a[1]]]
        gap = np.abs(x - y)
        if s.shape == "round":
            dist = np.minimum(gap, p - gap)
            adj = dist == 1
        else:
            dist = gap
            adj = (gap == 1) & ((x - 1) // half == (y - 1) // half)
        if c.variant == "adjacent":
            ok &= adj
        elif c.variant == "not_adjacent":
            ok &= ~adj
        elif c.variant == "min_separation":
            ok &= dist >= a[2]
        elif c.variant == "opposite":
            ok &= (gap == half) if p % 2 == 0 else np.zeros_like(ok)
        elif c.variant == "left_of":
            ok &= x < y
    return ok


def _seating(s: DomainSchema, cs: list[Constraint]) -> SatResult:
    seats = _seating_space(s)
    idx = np.flatnonzero(_seating_mask(s, cs, seats))
    if idx.size == 0:
        return SatResult(False)
    row = seats[idx[0]]
    return SatResult(True, Assignment(s.kind, {e: int(row[i]) for i, e in enumerate(s.entities)}))


def _scheduling(s: DomainSchema, cs: list[Constraint]) -> SatResult:
    # An event without a duration atom has duration 1; one with two different
    # duration atoms has no value at all.
    dur: dict[str, int] = {}
    for c in cs:
        if c.variant == "duration_eq":
            e, d = c.args
            if dur.setdefault(e, d) != d:
                return SatResult(False)
    for e in s.entities:
        dur.setdefault(e, 1)
    # events no constraint mentions are free and never block satisfiability
    mentioned = [e for e in s.entities if any(e in c.args[:2] for c in cs)]
    # single-event constraints shrink each start range before the product
    choices = []
    for e in mentioned:
        xs = np.arange(1, s.slots - dur[e] + 2)
        for c in cs:
            if c.args[0] != e:
                continue
            if c.variant == "at_slot":
                xs = xs[xs == c.args[1]]
            elif c.variant == "not_at_slot":
                xs = xs[~((xs <= c.args[1]) & (c.args[1] <= xs + dur[e] - 1))]
            elif c.variant == "start_between":
                xs = xs[(c.args[1] <= xs) & (xs <= c.args[2])]
        if xs.size == 0:
            return SatResult(False)
        choices.append(xs)
    radix = [x.size for x in choices]
    bound = int(np.prod(radix, dtype=np.int64)) if radix else 1
    if bound > MAX_CANDIDATES:
        raise SearchSpaceTooLarge(bound)
    pos = {e: i for i, e in enumerate(mentioned)}
    for lo in range(0, bound, _CHUNK):
        flat = np.arange(lo, min(bound, lo + _CHUNK), dtype=np.int64)
        if radix:
            digits = np.unravel_index(flat, radix)
            starts = np.stack([choices[i][d] for i, d in enumerate(digits)], axis=1)
        else:
            starts = np.ones((flat.size, 0), dtype=np.int64)
        ok = np.ones(flat.size, dtype=bool)
        for c in cs:
            a = c.args
            if c.variant == "same_slot":
                ok &= starts[:, pos[a[0]]] == starts[:, pos[a[1]]]
            elif c.variant == "not_simultaneous":
                ok &= starts[:, pos[a[0]]] != starts[:, pos[a[1]]]
            # unary atoms were applied to the ranges, durations folded into dur
        hit = np.flatnonzero(ok)
        if hit.size:
            row = starts[hit[0]]
            values = {e: (1, dur[e]) for e in s.entities}
            for e, i in pos.items():
                values[e] = (int(row[i]), dur[e])
            return SatResult(True, Assignment(s.kind, values))
    return SatResult(False)


def brute_force_sat(s: DomainSchema, constraints: Iterable[Constraint]) -> SatResult:
    """Exhaustive SAT check; refuses spaces above ``MAX_CANDIDATES``."""
    cs = list(constraints)
    for c in cs:
        validate_constraint(c, s)
    if s.kind is DomainKind.LOGIC_GRID:
        return _logic(s, cs)
    if s.kind is DomainKind.SEATING:
        return _seating(s, cs)
    return _scheduling(s, cs)


def satisfying_mask(s: DomainSchema, constraints: Iterable[Constraint]) -> np.ndarray:
    """Boolean mask over the whole enumerated space (logic grid and seating).

    Row order is fixed per schema, so masks of different constraint sets on
    the same schema are directly comparable.
    """
    cs = list(constraints)
    for c in cs:
        validate_constraint(c, s)
    if s.kind is DomainKind.LOGIC_GRID:
        return _logic_mask(s, cs, _logic_space(s))
    if s.kind is DomainKind.SEATING:
        return _seating_mask(s, cs, _seating_space(s))
    raise ValueError("satisfying_mask covers permutation domains only")
