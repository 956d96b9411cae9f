"""Accuracy tables, residual decomposition, trigger tables and paired inference."""

from __future__ import annotations

import csv
import io
import itertools
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from driftcheck.harness import TraceRow
from driftcheck.verifier import TRIGGER_ORDER

GroupKey = tuple[Any, ...]
BASELINES = ("direct", "cot", "ledger_only")


class CorpusMismatch(ValueError):
    """Two trace sets do not cover the same (problem, turn) units."""


def _group(rows: Iterable[TraceRow], keys: Sequence[str]) -> dict[GroupKey, list[TraceRow]]:
    out: dict[GroupKey, list[TraceRow]] = defaultdict(list)
    for r in rows:
        out[tuple(getattr(r, k) for k in keys)].append(r)
    return dict(sorted(out.items()))


# --------------------------------------------------------------------------
# accuracy


@dataclass(frozen=True)
class AccuracyCell:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.n


def turn_accuracy(rows: Iterable[TraceRow], group_keys: Sequence[str] = ("agent", "method")) -> dict[GroupKey, AccuracyCell]:
    """Percentage of rows with a correct final answer, per group (empty groups never appear)."""
    return {
        g: AccuracyCell(len(rs), sum(r.answer_correct for r in rs)) for g, rs in _group(rows, group_keys).items()
    }


@dataclass(frozen=True)
class RetentionCell:
    turn1: float | None
    turn10: float | None

    @property
    def retain(self) -> float | None:
        if self.turn1 is None or self.turn10 is None or self.turn1 == 0:
            return None
        return 100.0 * self.turn10 / self.turn1


def retention(rows: Iterable[TraceRow], group_keys: Sequence[str] = ("agent", "method"), last_turn: int = 10) -> dict[GroupKey, RetentionCell]:
    out = {}
    for g, rs in _group(rows, group_keys).items():
        acc = {}
        for t in (1, last_turn):
            sel = [r.answer_correct for r in rs if r.turn == t]
            acc[t] = 100.0 * sum(sel) / len(sel) if sel else None
        out[g] = RetentionCell(acc[1], acc[last_turn])
    return out


def relative_lift(accuracies: Mapping[str, float]) -> float:
    """(A_mus - best baseline) / best baseline."""
    missing = [m for m in (*BASELINES, "mus_repair") if m not in accuracies]
    if missing:
        raise KeyError(f"relative lift needs all four methods; missing {missing}")
    best = max(accuracies[m] for m in BASELINES)
    if best <= 0:
        raise ZeroDivisionError("best baseline accuracy is zero")
    return (accuracies["mus_repair"] - best) / best


# --------------------------------------------------------------------------
# residual decomposition and triggers


@dataclass(frozen=True)
class Decomposition:
    residuals: int
    drift: int
    unsat: int
    other: int

    def share(self, part: str) -> float:
        return 100.0 * getattr(self, part) / self.residuals if self.residuals else 0.0


def decompose_residuals(rows: Iterable[TraceRow], group_keys: Sequence[str] = ("agent", "method")) -> dict[GroupKey, Decomposition]:
    """Split incorrect final rows into drift, UNSAT ledger and other."""
    out = {}
    for g, rs in _group(rows, group_keys).items():
        bad = [r for r in rs if not r.answer_correct]
        if not bad:
            continue
        unsat = sum(not r.z3_sat for r in bad)
        drift = sum(r.z3_sat and "answer_ledger_conflict" in r.triggers for r in bad)
        out[g] = Decomposition(len(bad), drift, unsat, len(bad) - drift - unsat)
    return out


@dataclass(frozen=True)
class TriggerCell:
    events: int  # firings summed over all attempts
    rows: int  # rows in which the trigger fired at least once
    post_repair_correct: int
    post_repair_sat: int

    @property
    def post_repair_accuracy(self) -> float | None:
        return 100.0 * self.post_repair_correct / self.rows if self.rows else None

    @property
    def post_repair_sat_rate(self) -> float | None:
        return 100.0 * self.post_repair_sat / self.rows if self.rows else None


def trigger_table(rows: Iterable[TraceRow], group_keys: Sequence[str] = ("agent", "method")) -> dict[GroupKey, dict[str, TriggerCell]]:
    out = {}
    for g, rs in _group(rows, group_keys).items():
        cells = {}
        for code in TRIGGER_ORDER:
            name = code.value
            events = 0
            fired_rows = []
            for r in rs:
                records = r.attempt_records or ()
                n = sum(name in a.triggers for a in records) if records else int(name in r.triggers)
                events += n
                if n:
                    fired_rows.append(r)
            cells[name] = TriggerCell(
                events,
                len(fired_rows),
                sum(r.answer_correct for r in fired_rows),
                sum(r.z3_sat for r in fired_rows),
            )
        out[g] = cells
    return out


@dataclass(frozen=True)
class TruncationCell:
    all_rows: AccuracyCell
    non_truncated: AccuracyCell | None


def truncation_split(rows: Iterable[TraceRow], group_keys: Sequence[str] = ("agent", "method")) -> dict[GroupKey, TruncationCell]:
    out = {}
    for g, rs in _group(rows, group_keys).items():
        keep = [r for r in rs if not r.truncated]
        out[g] = TruncationCell(
            AccuracyCell(len(rs), sum(r.answer_correct for r in rs)),
            AccuracyCell(len(keep), sum(r.answer_correct for r in keep)) if keep else None,
        )
    return out


# --------------------------------------------------------------------------
# paired inference


@dataclass(frozen=True)
class PairedDelta:
    problem_id: str
    acc_a: float
    acc_b: float

    @property
    def delta(self) -> float:
        return self.acc_a - self.acc_b


def per_problem_accuracy(rows: Iterable[TraceRow]) -> dict[str, float]:
    by: dict[str, list[bool]] = defaultdict(list)
    for r in rows:
        by[r.problem_id].append(r.answer_correct)
    return {pid: sum(v) / len(v) for pid, v in by.items()}


def paired_deltas(rows_a: Iterable[TraceRow], rows_b: Iterable[TraceRow]) -> tuple[list[PairedDelta], int]:
    """Pair by problem id; returns the pairs and how many unmatched problems were dropped."""
    a = per_problem_accuracy(rows_a)
    b = per_problem_accuracy(rows_b)
    common = sorted(a.keys() & b.keys())
    return [PairedDelta(p, a[p], b[p]) for p in common], len(a.keys() ^ b.keys())


def _values(deltas: Sequence[PairedDelta] | Sequence[float] | np.ndarray) -> np.ndarray:
    if len(deltas) and isinstance(deltas[0], PairedDelta):
        return np.array([d.delta for d in deltas], dtype=float)
    return np.asarray(deltas, dtype=float)


def bootstrap_ci(
    deltas: Sequence[PairedDelta] | Sequence[float] | np.ndarray,
    B: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean paired delta, resampling problems."""
    x = _values(deltas)
    n = x.size
    if n < 2:
        raise ValueError("bootstrap needs at least two paired problems")
    rng = np.random.default_rng(seed)
    means = np.empty(B)
    step = max(1, 2_000_000 // n)
    for lo in range(0, B, step):
        hi = min(B, lo + step)
        idx = rng.integers(0, n, size=(hi - lo, n))
        means[lo:hi] = x[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo_v, hi_v = np.percentile(means, [tail, 100.0 - tail])
    return float(lo_v), float(hi_v)


def sign_permutation_test(deltas: Sequence[PairedDelta] | Sequence[float] | np.ndarray, R: int = 10_000, seed: int = 0) -> float:
    """Two-sided Monte-Carlo sign-flip test, p = (1 + hits) / (1 + R)."""
    x = _values(deltas)
    n = x.size
    if n < 2:
        raise ValueError("sign-permutation test needs at least two paired problems")
    observed = abs(x.mean())
    rng = np.random.default_rng(seed)
    hits = 0
    step = max(1, 2_000_000 // n)
    tol = 1e-12 * max(1.0, observed)
    for lo in range(0, R, step):
        hi = min(R, lo + step)
        signs = rng.integers(0, 2, size=(hi - lo, n)) * 2 - 1
        hits += int(np.count_nonzero(np.abs((signs * x).mean(axis=1)) >= observed - tol))
    return (1 + hits) / (1 + R)


def exact_sign_test(deltas: Sequence[PairedDelta] | Sequence[float] | np.ndarray) -> float:
    """Exact two-sided sign-flip p-value by full enumeration (n <= 20)."""
    x = _values(deltas)
    n = x.size
    if n > 20:
        raise ValueError("exact enumeration is limited to n <= 20")
    observed = abs(x.mean())
    tol = 1e-12 * max(1.0, observed)
    hits = 0
    total = 1 << n
    bits = np.arange(n)
    for lo in range(0, total, 1 << 16):
        codes = np.arange(lo, min(total, lo + (1 << 16)))
        signs = 1 - 2 * ((codes[:, None] >> bits) & 1)
        hits += int(np.count_nonzero(np.abs((signs * x).mean(axis=1)) >= observed - tol))
    return hits / total


def bh_correct(pvalues: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up q-values (cumulative minimum from the largest rank, capped at 1)."""
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return []
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return [float(v) for v in q]


@dataclass(frozen=True)
class InferenceResult:
    agent: str
    method: str
    baseline: str
    n: int
    dropped: int
    delta_pp: float
    ci_lo: float
    ci_hi: float
    p: float
    q: float = float("nan")


def compare_methods(
    rows: Iterable[TraceRow],
    baseline: str = "direct",
    B: int = 10_000,
    R: int = 10_000,
    seed: int = 0,
) -> list[InferenceResult]:
    """Every method against ``baseline`` within each agent, BH-adjusted across all comparisons."""
    by = _group(rows, ("agent", "method"))
    agents = sorted({g[0] for g in by})
    results = []
    for agent in agents:
        base = by.get((agent, baseline))
        if not base:
            continue
        for (ag, method), rs in by.items():
            if ag != agent or method == baseline:
                continue
            pairs, dropped = paired_deltas(rs, base)
            if len(pairs) < 2:
                continue
            lo, hi = bootstrap_ci(pairs, B, seed)
            p = sign_permutation_test(pairs, R, seed)
            d = float(_values(pairs).mean())
            results.append(InferenceResult(agent, method, baseline, len(pairs), dropped, 100 * d, 100 * lo, 100 * hi, p))
    qs = bh_correct([r.p for r in results])
    return [InferenceResult(**{**asdict(r), "q": q}) for r, q in zip(results, qs)]


# --------------------------------------------------------------------------
# overlap


@dataclass(frozen=True)
class Overlap:
    errors_a: int
    errors_b: int
    overlap: int

    @property
    def union(self) -> int:
        return self.errors_a + self.errors_b - self.overlap

    @property
    def jaccard(self) -> float:
        return self.overlap / self.union if self.union else 1.0

    @property
    def share_of_a(self) -> float:
        return self.overlap / self.errors_a if self.errors_a else 0.0

    @property
    def share_of_b(self) -> float:
        return self.overlap / self.errors_b if self.errors_b else 0.0


def overlap_from_counts(errors_a: int, errors_b: int, overlap: int) -> Overlap:
    if overlap > min(errors_a, errors_b) or overlap < 0:
        raise ValueError("overlap cannot exceed either error set")
    return Overlap(errors_a, errors_b, overlap)


def residual_overlap(rows_a: Iterable[TraceRow], rows_b: Iterable[TraceRow]) -> Overlap:
    """Overlap of error rows keyed by (problem_id, turn); both sides must cover the same units."""
    rows_a, rows_b = list(rows_a), list(rows_b)
    units_a = {(r.problem_id, r.turn) for r in rows_a}
    units_b = {(r.problem_id, r.turn) for r in rows_b}
    if units_a != units_b:
        raise CorpusMismatch(f"trace sets cover different units ({len(units_a ^ units_b)} differ)")
    err_a = {(r.problem_id, r.turn) for r in rows_a if not r.answer_correct}
    err_b = {(r.problem_id, r.turn) for r in rows_b if not r.answer_correct}
    return Overlap(len(err_a), len(err_b), len(err_a & err_b))


# --------------------------------------------------------------------------
# reports


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.2f}" if np.isfinite(v) else "n/a"
    return str(v)


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows([[_fmt(v) for v in row] for row in self.rows])
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = "| " + " | ".join(self.columns) + " |"
        sep = "|" + "---|" * len(self.columns)
        body = ["| " + " | ".join(_fmt(v) for v in row) + " |" for row in self.rows]
        return "\n".join([f"### {self.name}", "", head, sep, *body, ""])

    def to_json(self) -> dict[str, Any]:
        return {"columns": self.columns, "rows": self.rows}


def build_report(
    rows: Sequence[TraceRow],
    baseline: str = "direct",
    B: int = 10_000,
    R: int = 10_000,
    seed: int = 0,
) -> list[Table]:
    tables = []
    acc = turn_accuracy(rows, ("agent", "method"))
    tables.append(Table("accuracy", ["agent", "method", "rows", "accuracy_pct"], [[*g, c.n, c.accuracy] for g, c in acc.items()]))
    dom = turn_accuracy(rows, ("agent", "method", "domain"))
    tables.append(
        Table("accuracy_by_domain", ["agent", "method", "domain", "rows", "accuracy_pct"], [[*g, c.n, c.accuracy] for g, c in dom.items()])
    )
    ret = retention(rows)
    tables.append(
        Table("retention", ["agent", "method", "turn1_pct", "turn10_pct", "retain_pct"], [[*g, c.turn1, c.turn10, c.retain] for g, c in ret.items()])
    )
    lifts = []
    for agent in sorted({r.agent for r in rows}):
        per = {g[1]: c.accuracy for g, c in acc.items() if g[0] == agent}
        try:
            lifts.append([agent, 100.0 * relative_lift(per)])
        except (KeyError, ZeroDivisionError):
            lifts.append([agent, None])
    tables.append(Table("relative_lift", ["agent", "rho_pct"], lifts))
    dec = decompose_residuals(rows)
    tables.append(
        Table(
            "residual_decomposition",
            ["agent", "method", "residuals", "drift", "unsat", "other", "drift_pct", "unsat_pct", "other_pct"],
            [[*g, d.residuals, d.drift, d.unsat, d.other, d.share("drift"), d.share("unsat"), d.share("other")] for g, d in dec.items()],
        )
    )
    trig = trigger_table(rows)
    tables.append(
        Table(
            "triggers",
            ["agent", "method", "trigger", "events", "rows", "post_repair_accuracy_pct", "post_repair_sat_pct"],
            [
                [*g, name, c.events, c.rows, c.post_repair_accuracy, c.post_repair_sat_rate]
                for g, cells in trig.items()
                for name, c in cells.items()
            ],
        )
    )
    inf = compare_methods(rows, baseline, B, R, seed)
    tables.append(
        Table(
            "inference",
            ["agent", "method", "baseline", "n", "dropped", "delta_pp", "ci_lo", "ci_hi", "p", "q"],
            [[r.agent, r.method, r.baseline, r.n, r.dropped, r.delta_pp, r.ci_lo, r.ci_hi, r.p, r.q] for r in inf],
        )
    )
    trunc = truncation_split(rows)
    tables.append(
        Table(
            "truncation",
            ["agent", "method", "all_pct", "non_truncated_pct"],
            [[*g, c.all_rows.accuracy, c.non_truncated.accuracy if c.non_truncated else None] for g, c in trunc.items()],
        )
    )
    return tables


def overlap_table(labelled: Mapping[str, Sequence[TraceRow]], method: str = "mus_repair") -> Table:
    """Pairwise overlap of error rows for one method across labelled trace sets."""
    out = []
    for (la, ra), (lb, rb) in itertools.combinations(labelled.items(), 2):
        sa = [r for r in ra if r.method == method]
        sb = [r for r in rb if r.method == method]
        ov = residual_overlap(sa, sb)
        out.append([la, lb, ov.errors_a, ov.errors_b, ov.overlap, ov.jaccard, ov.share_of_a, ov.share_of_b])
    return Table("overlap", ["a", "b", "errors_a", "errors_b", "overlap", "jaccard", "share_of_a", "share_of_b"], out)


def write_report(tables: Sequence[Table], out_dir: str | Path, config: Mapping[str, Any] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md = []
    for t in tables:
        (out / f"{t.name}.csv").write_text(t.to_csv(), encoding="utf-8")
        md.append(t.to_markdown())
    (out / "report.md").write_text("\n".join(md), encoding="utf-8")
    bundle = {"config": dict(config or {}), "tables": {t.name: t.to_json() for t in tables}}
    path = out / "report.json"
    path.write_text(json.dumps(bundle, indent=2, sort_keys=True, default=_json_default), encoding="utf-8")
    return path


def _json_default(v: Any) -> Any:
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v).__name__)


