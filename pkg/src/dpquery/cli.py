"""Command-line interface: ``dpquery run | test-dp | accuracy``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .aggregates import ApproxBoundsConfig
from .accuracy import accuracy_report
from .engine import QueryConfig, plan_query, run_plain
from .errors import DPQueryError, IngestError
from .io import load_catalog
from .noise import RandomSource
from .planner import ExecutionOptions, ResultTable, dump_plan, execute
from .tester import PRIMITIVES, TesterConfig, run_named

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CODES = {
    "parse": 3,
    "ownership": 4,
    "privacy-parameter": 5,
    "io": 6,
    "internal": EXIT_INTERNAL,
}
EXIT_DP_TEST_FAILED = 7

CI_NOTE = "confidence intervals cover the Laplace noise only, not clamping or thresholding"


def _seed(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("DPQUERY_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise DPQueryError(f"DPQUERY_SEED must be an integer, got {env!r}") from None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _header(table: ResultTable, leftovers: bool) -> list[str]:
    cols = []
    for name, kind in zip(table.columns, table.kinds):
        cols.append(name)
        if kind == "agg":
            cols += [f"{name}_ci_low", f"{name}_ci_high"]
    if leftovers:
        cols.append("leftovers")
    return cols


def _cells(table: ResultTable, row, leftovers: bool) -> list:
    out = []
    for value, kind, ci in zip(row.values, table.kinds, row.cis):
        out.append(value)
        if kind == "agg":
            out += [None, None] if ci is None else list(ci)
    if leftovers:
        out.append(row.leftovers)
    return out


def _footer(table: ResultTable) -> dict:
    return {
        "suppressed_partitions": table.suppressed_count,
        "epsilon": table.epsilon,
        "delta": table.delta,
        "tau": table.tau,
        "cu": table.cu,
        "ci_level": table.ci_level,
        "note": CI_NOTE,
    }


def write_table(table: ResultTable, fmt: str, leftovers: bool, out) -> None:
    header = _header(table, leftovers)
    if fmt == "json":
        for row in table.rows:
            record = dict(zip(header, _cells(table, row, leftovers)))
            out.write(json.dumps(record, sort_keys=False) + "\n")
        out.write(json.dumps({"footer": _footer(table)}) + "\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in table.rows:
        writer.writerow([_fmt(v) for v in _cells(table, row, leftovers)])
    for key, value in _footer(table).items():
        out.write(f"# {key}={_fmt(value)}\n")


def cmd_run(args, out) -> int:
    catalog = load_catalog(args.data, args.uid_col)
    try:
        sql = sys.stdin.read() if args.query == "-" else Path(args.query).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(str(exc)) from exc
    seed = _seed(args.seed)
    if args.plain:
        rel = run_plain(sql, catalog, seed)
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(rel.names)
        for r in rel.rows:
            writer.writerow([_fmt(v) for v in r])
        return EXIT_OK
    config = QueryConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        cu=args.cu,
        leftovers=args.leftovers,
        ci_level=args.ci_level,
        snap=not args.no_snap,
        bounds=ApproxBoundsConfig(success_prob=args.bounds_success_prob),
    )
    plan = plan_query(sql, catalog, config)
    if args.explain:
        out.write(dump_plan(plan))
        return EXIT_OK
    table = execute(plan, catalog, RandomSource(seed), ExecutionOptions(config.ci_level, config.snap))
    write_table(table, args.format, args.leftovers, out)
    return EXIT_OK


def cmd_testdp(args, out) -> int:
    cfg = TesterConfig(
        num_databases=args.databases,
        value_range=args.value_range,
        samples=args.samples,
        buckets=args.buckets,
        epsilon=args.epsilon,
        delta=args.delta,
        alpha=args.alpha,
        ci_level=args.ci_level,
        snap=args.snap,
        seed=_seed(args.seed) or 0,
    )
    verdict = run_named(args.function, cfg)
    out.write(f"{args.function}: {'PASS' if verdict.passed else 'FAIL'} "
              f"({verdict.pairs_tested} pairs, {verdict.databases_sampled} databases)\n")
    if verdict.passed:
        return EXIT_OK
    path = Path(args.report or f"dp-test-{args.function}-witness.json")
    try:
        path.write_text(json.dumps(verdict.report(), indent=2), encoding="utf-8")
    except OSError as exc:
        raise IngestError(str(exc)) from exc
    w = verdict.witness
    out.write(f"witness: {list(w.d1)} vs {list(w.d2)}\nreport: {path}\n")
    return EXIT_DP_TEST_FAILED


def cmd_accuracy(args, out) -> int:
    report = accuracy_report(
        args.sensitivity,
        args.epsilon,
        args.delta,
        args.cu,
        args.true_value,
        tuple(args.uniform) if args.uniform else None,
    )
    for line in report.lines():
        out.write(line + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpquery", description="Differentially private SQL over CSV tables.")
    p.add_argument("-v", "--verbose", action="store_true", help="log suppressed row faults to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an anonymized query")
    r.add_argument("--data", required=True, help="directory of CSV tables, one per file")
    r.add_argument("--query", required=True, help="file holding the SQL text, or - for stdin")
    r.add_argument("--uid-col", default="uid")
    r.add_argument("--epsilon", type=float, default=1.0)
    r.add_argument("--delta", type=float, default=None, help="default: n^(-eps ln n) for n users")
    r.add_argument("--cu", type=int, default=1, help="max partitions per user")
    r.add_argument("--seed", type=int, default=None, help="falls back to $DPQUERY_SEED")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--leftovers", action="store_true", help="release a merged partition of suppressed groups")
    r.add_argument("--ci-level", type=float, default=0.95)
    r.add_argument("--no-snap", action="store_true", help="release unrounded Laplace noise")
    r.add_argument("--bounds-success-prob", type=float, default=1 - 1e-9)
    r.add_argument("--explain", action="store_true", help="print the rewritten plan instead of running")
    r.add_argument("--plain", action="store_true", help="debug: run a non-anonymized query exactly")
    r.set_defaults(handler=cmd_run)

    t = sub.add_parser("test-dp", help="stochastic DP test of an aggregation primitive")
    t.add_argument("function", choices=PRIMITIVES)
    t.add_argument("--databases", type=int, default=16)
    t.add_argument("--value-range", type=float, default=0.5)
    t.add_argument("--samples", type=int, default=50_000)
    t.add_argument("--buckets", type=int, default=50)
    t.add_argument("--epsilon", type=float, default=1.0)
    t.add_argument("--delta", type=float, default=0.0)
    t.add_argument("--alpha", type=float, default=0.02)
    t.add_argument("--ci-level", type=float, default=0.999)
    t.add_argument("--snap", action="store_true", help="test snapped releases")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--report", default=None, help="where to write the witness report on failure")
    t.set_defaults(handler=cmd_testdp)

    a = sub.add_parser("accuracy", help="closed-form noise, suppression and clamping estimates")
    a.add_argument("--sensitivity", type=float, required=True, help="user-level sensitivity of the value")
    a.add_argument("--epsilon", type=float, required=True)
    a.add_argument("--delta", type=float, default=None)
    a.add_argument("--cu", type=int, default=1)
    a.add_argument("--true-value", type=float, default=None)
    a.add_argument("--uniform", type=float, nargs=3, metavar=("A", "B", "U"), default=None)
    a.set_defaults(handler=cmd_accuracy)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, stream=sys.stderr)
    try:
        return args.handler(args, out)
    except DPQueryError as exc:
        print(f"dpquery: {exc.category} error: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except Exception as exc:  # pragma: no cover - last resort
        print(f"dpquery: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
