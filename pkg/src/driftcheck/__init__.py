"""Solver-instrumented harness for multi-turn constraint reasoning.

Generates satisfiable multi-turn constraint trajectories, verifies every turn
for ledger satisfiability and assignment validity, runs four inference
methods (including MUS-guided repair) and splits residual errors into
contradiction and satisfiable drift.
"""

from driftcheck.domains import (
    Assignment,
    Constraint,
    ConstraintError,
    DomainKind,
    DomainSchema,
    canonicalize,
    evaluate,
    schema_validate,
)
from driftcheck.ledger import Ledger, merge, serialize
from driftcheck.solver import (
    SatResult,
    assignment_to_constraints,
    brute_force_sat,
    check_sat,
    extract_mus,
    satisfies,
    violated_constraints,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "Constraint",
    "ConstraintError",
    "DomainKind",
    "DomainSchema",
    "Ledger",
    "SatResult",
    "assignment_to_constraints",
    "brute_force_sat",
    "canonicalize",
    "check_sat",
    "evaluate",
    "extract_mus",
    "merge",
    "satisfies",
    "schema_validate",
    "serialize",
    "violated_constraints",
]
