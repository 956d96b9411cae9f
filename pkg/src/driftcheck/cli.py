"""Command-line entry point: generate, run, analyze, fixtures.

Exit codes: 0 success, 1 analysis/fixture/run failure, 2 usage error.
A TOML config file (``--config``) may supply defaults per subcommand under
a table named after it; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from driftcheck import metrics
from driftcheck.agents import ALL_METHODS, HttpAgent, HttpConfig, MockAgent, MockPolicy, parse_methods
from driftcheck.fixtures import FIXTURES, replay, score
from driftcheck.generator import GeneratorConfig, corpus_stats, format_stats, generate_corpus, read_corpus, write_corpus
from driftcheck.harness import RunConfig, read_trace, run_corpus, write_trace

log = logging.getLogger("driftcheck")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(path: str | None, section: str) -> dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path} is not valid TOML: {exc}") from exc
    sub = data.get(section, {})
    if not isinstance(sub, dict):
        raise UsageError(f"config section [{section}] must be a table")
    return {k.replace("-", "_"): v for k, v in sub.items()}


# --------------------------------------------------------------------------
# commands


def cmd_generate(args: argparse.Namespace) -> int:
    if args.count_per_domain is not None and args.count_per_domain < 0:
        raise UsageError("--count-per-domain must be non-negative")
    if not args.out:
        raise UsageError("generate needs --out")
    count = 340 if args.paper_scale else (args.count_per_domain if args.count_per_domain is not None else 10)
    domains = tuple(d.strip() for d in args.domains.split(",") if d.strip())
    try:
        cfg = GeneratorConfig(master_seed=args.seed, problems_per_domain=count, domains=domains)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    corpus = generate_corpus(cfg)
    write_corpus(corpus, args.out)
    print(format_stats(corpus_stats(corpus)))
    print(f"wrote {len(corpus)} problems to {args.out}")
    return EXIT_OK


def _load_policy(path: str | None, seed: int) -> MockPolicy:
    if not path:
        return MockPolicy(seed=seed)
    p = Path(path)
    if not p.exists():
        raise UsageError(f"mock policy file not found: {path}")
    text = p.read_text(encoding="utf-8")
    data = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
    data.setdefault("seed", seed)
    try:
        return MockPolicy.from_json(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad mock policy: {exc}") from exc


def cmd_run(args: argparse.Namespace) -> int:
    if not args.corpus or not Path(args.corpus).exists():
        raise UsageError(f"corpus file not found: {args.corpus}")
    if not args.out:
        raise UsageError("run needs --out")
    try:
        methods = parse_methods(args.methods) if args.methods else []
        cfg = RunConfig(
            k=args.k,
            truncation_retries=args.truncation_retries,
            ledger_budget=args.ledger_budget,
            workers=args.workers,
            seed=args.seed,
            record_timing=args.timing,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    corpus = read_corpus(args.corpus)
    problems = corpus.split(args.split)
    if args.limit is not None:
        problems = problems[: args.limit]

    run_meta: dict[str, Any] = {"run": cfg.to_json(), "methods": [m.value for m in methods], "split": args.split}
    if args.agent == "mock":
        policy = _load_policy(args.mock_policy, args.seed)
        agent: Any = MockAgent(policy, agent_id=args.agent_id or "mock")
        run_meta["mock_policy"] = policy.to_json()
    else:
        if not args.endpoint or not args.model:
            raise UsageError("--agent http needs --endpoint and --model")
        agent = HttpAgent(
            HttpConfig(args.endpoint, args.model, truncation_retries=args.truncation_retries, max_in_flight=args.workers),
            agent_id=args.agent_id,
        )
        run_meta["http"] = {"endpoint": args.endpoint, "model": args.model}
    run_meta["agent"] = agent.agent_id
    run_meta["corpus"] = corpus.config.to_json()

    rows = run_corpus(problems, methods, [agent], cfg)
    write_trace(rows, args.out, run_meta)
    errored = sum(r.errored for r in rows)
    print(f"wrote {len(rows)} rows for {len(problems)} problems x {len(methods)} methods to {args.out}")
    if errored:
        print(f"{errored} rows had agent errors", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _selftest() -> bool:
    q = metrics.bh_correct([0.01, 0.02, 0.04])
    ok = all(abs(a - b) < 1e-12 for a, b in zip(q, [0.03, 0.03, 0.04]))
    print(f"BH worked example p=(0.01, 0.02, 0.04) -> q={tuple(round(v, 6) for v in q)}: {'ok' if ok else 'FAIL'}")
    return ok


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.selftest:
        return EXIT_OK if _selftest() else EXIT_FAIL
    if not args.traces:
        raise UsageError("analyze needs at least one --traces file (or --selftest)")
    labelled: dict[str, list] = {}
    for spec in args.traces:
        label, _, path = spec.rpartition("=")
        if not Path(path).exists():
            raise UsageError(f"trace file not found: {path}")
        _, rows = read_trace(path)
        labelled[label or Path(path).stem] = rows
    all_rows = [r for rows in labelled.values() for r in rows]
    tables = metrics.build_report(all_rows, args.baseline_method, args.bootstrap, args.permutations, args.seed)
    if len(labelled) > 1:
        try:
            tables.append(metrics.overlap_table(labelled, args.overlap_method))
        except metrics.CorpusMismatch as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
    path = metrics.write_report(
        tables, args.out_dir, {"traces": args.traces, "baseline": args.baseline_method, "B": args.bootstrap, "R": args.permutations, "seed": args.seed}
    )
    for t in tables[:1] + [t for t in tables if t.name == "residual_decomposition"]:
        print(t.to_markdown())
    print(f"report written to {path}")
    return EXIT_OK


def cmd_fixtures(args: argparse.Namespace) -> int:
    names = args.case or sorted(FIXTURES)
    unknown = [n for n in names if n not in FIXTURES]
    if unknown:
        raise UsageError(f"unknown fixture(s): {', '.join(unknown)}")
    failed = False
    for name in names:
        case = FIXTURES[name]
        results = replay(case)
        summary = ", ".join(f"{m} {'/'.join(map(str, score(results, name, m)))}" for m in case.methods)
        print(f"{name}: {summary}")
        for r in results:
            mark = "ok " if r.ok else "BAD"
            trig = ",".join(r.verdict.trigger_names) or "-"
            print(f"  [{mark}] turn {r.turn} {r.method:<10} expected {'pass' if r.expected else 'fail'} got {'pass' if r.got else 'fail'} ({trig})")
            failed |= not r.ok
    return EXIT_FAIL if failed else EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftcheck", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file with per-command defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a seeded benchmark corpus")
    g.add_argument("--seed", type=int, default=GeneratorConfig.master_seed)
    g.add_argument("--count-per-domain", type=int)
    g.add_argument("--domains", default="logic_grid,scheduling,seating")
    g.add_argument("--paper-scale", action="store_true", help="340 problems per domain")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run agents over a corpus and write a trace file")
    r.add_argument("--corpus")
    r.add_argument("--split", default="test", choices=["test", "dev", "all"])
    r.add_argument("--methods", default=",".join(m.value for m in ALL_METHODS))
    r.add_argument("--agent", default="mock", choices=["mock", "http"])
    r.add_argument("--agent-id")
    r.add_argument("--mock-policy", help="JSON or TOML file with MockPolicy fields")
    r.add_argument("--endpoint")
    r.add_argument("--model")
    r.add_argument("--k", type=int, default=2, help="repair budget")
    r.add_argument("--truncation-retries", type=int, default=2)
    r.add_argument("--ledger-budget", type=int, default=3000)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--limit", type=int)
    r.add_argument("--timing", action="store_true", help="record per-row wall time (breaks byte determinism)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="compute report tables from trace files")
    a.add_argument("--traces", action="append", default=[], help="[LABEL=]PATH, repeatable")
    a.add_argument("--baseline-method", default="direct")
    a.add_argument("--overlap-method", default="mus_repair")
    a.add_argument("--bootstrap", type=int, default=10_000)
    a.add_argument("--permutations", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out-dir", default="report")
    a.add_argument("--selftest", action="store_true")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("fixtures", help="replay the hand-encoded transcripts")
    f.add_argument("--case", action="append", help="fixture id (repeatable); default all")
    f.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        first = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if first.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        defaults = _load_config(first.config, first.command)
        if defaults:
            subparser = parser._subparsers._group_actions[0].choices[first.command]  # type: ignore[union-attr]
            known = {a.dest for a in subparser._actions}
            stray = sorted(set(defaults) - known)
            if stray:
                raise UsageError(f"unknown keys in [{first.command}]: {', '.join(stray)}")
            subparser.set_defaults(**defaults)
            args = parser.parse_args(argv)
        else:
            args = first
        return args.func(args)
    except UsageError as exc:
        print(f"driftcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
