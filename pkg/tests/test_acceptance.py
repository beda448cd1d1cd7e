"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest; with
pytest the verdict lines are written straight to the terminal.
"""

from __future__ import annotations

import itertools
import math
import subprocess
import sys
import time
from collections import defaultdict

import numpy as np
import pytest

from conftest import DATA, GOLDEN, LISTING4, LISTING5
from dpquery import QueryConfig, explain, load_catalog, plan_query, run_query
from dpquery.aggregates import (
    AggKind,
    AggregatorSpec,
    AggregatorState,
    ApproxBoundsConfig,
    approx_bounds,
    approx_bounds_threshold,
    release,
    sensitivity_bound,
)
from dpquery.noise import ClampBounds, NoiselessSource, RandomSource
from dpquery.plan import evaluate
from dpquery.planner import check_contribution_bounds, compute_tau, execute, run_per_user_stage
from dpquery.relational import Column, Relation
from dpquery.tester import TesterConfig, corpus, dp_predicate_test, get_primitive, run_named, successors

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    """Print one verdict line, then assert it."""

    def report(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


# 1 -------------------------------------------------------------------------------


def test_c01_median_noise_law(verdict):
    start = time.perf_counter()
    state = AggregatorState.from_values(AggregatorSpec(AggKind.COUNT), range(100))
    draws = release(state, 0.1, RandomSource(101), size=100_000, snap=False)
    median = float(np.median(np.abs(draws - 100)))
    elapsed = time.perf_counter() - start
    ok = abs(median / 6.931 - 1) <= 0.05 and elapsed < 10
    verdict(1, ok, f"median |noise| = {median:.4f} (target 6.931 +/- 5%), {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------------


def test_c02_count_relative_error(verdict):
    # a count whose user-level sensitivity is 373: the sum of per-user counts clamped to [0, 373]
    true_count = 1.477e6
    state = AggregatorState(AggregatorSpec(AggKind.SUM, ClampBounds(0, 373)), input_count=1, total=true_count)
    draws = release(state, 0.1, RandomSource(102), size=100_000, snap=False)
    rel = float(np.median(np.abs(draws - true_count)) / true_count)
    verdict(2, abs(rel / 0.00175 - 1) <= 0.10, f"median relative error = {rel:.6f} (target 0.00175 +/- 10%)")


# 3 -------------------------------------------------------------------------------


def test_c03_tau(verdict):
    t_half = compute_tau(1.0, 0.5, 1)
    t_05 = compute_tau(1.0, 0.05, 1)
    grid = np.geomspace(1e-6, 0.5, 50)
    taus = [compute_tau(1.0, d, 1) for d in grid]
    monotone = all(a > b for a, b in zip(taus, taus[1:]))
    ok = t_half == 1.0 and abs(t_05 - 3.302585) <= 1e-6 and monotone
    verdict(3, ok, f"tau(1,0.5,1) = {t_half!r}, tau(1,0.05,1) = {t_05:.7f}, strictly decreasing: {monotone}")


# 4 -------------------------------------------------------------------------------


def _release_rate(rows, cu, trials):
    catalog = {"T": Relation((Column("uid", "int"), Column("g", "text")), rows, 0)}
    plan = plan_query(
        "SELECT WITH ANONYMIZATION g, ANON_COUNT(*) FROM T GROUP BY g",
        catalog,
        QueryConfig(epsilon=1.0, delta=0.05, cu=cu),
    )
    released = sum(bool(execute(plan, catalog, RandomSource(seed)).rows) for seed in range(trials))
    return released / trials


def test_c04_threshold_soundness(verdict):
    trials, delta = 100_000, 0.05
    sigma = math.sqrt(delta * (1 - delta) / trials)
    # Cu=1: one user in one partition. Cu=2: one user alone in each of two partitions.
    rate1 = _release_rate([(1, "a")], 1, trials)
    rate2 = _release_rate([(1, "a"), (1, "b")], 2, trials)
    limit = delta + 3 * sigma
    ok = rate1 <= limit and rate2 <= limit
    verdict(4, ok, f"release rate Cu=1: {rate1:.5f}, Cu=2: {rate2:.5f} (limit {limit:.5f}, {trials} engine runs each)")


# 5 -------------------------------------------------------------------------------

GRID = (-3.0, -1.5, -1.0, -0.25, 0.0, 0.5, 1.25, 2.0, 4.0)
LOWER, UPPER = -1.0, 2.0


def test_c05_sensitivity_brute_force(verdict):
    start = time.perf_counter()
    quiet = NoiselessSource(0)
    b = ClampBounds(LOWER, UPPER)
    specs = {
        "COUNT": AggregatorSpec(AggKind.COUNT),
        "SUM": AggregatorSpec(AggKind.SUM, b),
        "AVG": AggregatorSpec(AggKind.AVG, b),
        "VAR": AggregatorSpec(AggKind.VAR, b),
        "NTILE": AggregatorSpec(AggKind.NTILE, b, 0.5),
    }
    failures = []
    checked = 0
    for n in range(1, 6):
        for db in itertools.product(GRID, repeat=n):
            out = {k: release(AggregatorState.from_values(s, db), 1.0, quiet) for k, s in specs.items()}
            checked += 1
            for k in ("AVG", "NTILE"):
                if not LOWER <= out[k] <= UPPER:
                    failures.append((k, db, out[k]))
            if not 0 <= out["VAR"] <= (UPPER - LOWER) ** 2:
                failures.append(("VAR", db, out["VAR"]))
            if n == 1:
                continue
            # removing the last record: every removal is covered because all orderings are enumerated
            for k in ("COUNT", "SUM"):
                smaller = release(AggregatorState.from_values(specs[k], db[:-1]), 1.0, quiet)
                if abs(out[k] - smaller) > sensitivity_bound(specs[k]) + 1e-12:
                    failures.append((k, db, out[k] - smaller))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    verdict(5, ok, f"{checked} databases, {len(failures)} violations, {elapsed:.1f}s (limit 60s)")


# 6 -------------------------------------------------------------------------------

SQL6 = (
    "SELECT WITH ANONYMIZATION g, ANON_SUM(v, -2, 3) AS s, ANON_COUNT(*, 0, 4) AS rows_, ANON_COUNT(*) AS users "
    "FROM A, B USING(uid) GROUP BY g"
)
SENS6 = 3 + 4 + 1


def _random_catalog(rng):
    n_users = int(rng.integers(1, 7))
    a_rows, b_rows = [], []
    for uid in range(n_users):
        for _ in range(rng.integers(1, 9)):
            a_rows.append((uid, f"g{rng.integers(0, 4)}", float(rng.uniform(-5, 6))))
        for _ in range(rng.integers(1, 5)):  # join fan-out
            b_rows.append((uid, int(rng.integers(0, 100))))
    a = Relation((Column("uid", "int"), Column("g", "text"), Column("v", "float")), a_rows, 0)
    b = Relation((Column("uid", "int"), Column("w", "int")), b_rows, 0)
    return {"A": a, "B": b}


def _exact_outputs(catalog, cu, seed):
    cfg = QueryConfig(epsilon=1.0, delta=0.1, cu=cu, tau=1.0, noiseless=True)
    table = run_query(SQL6, catalog, cfg, seed=seed)
    out = defaultdict(float)
    for row in table.rows:
        for j, v in enumerate(row.values[1:]):
            out[(row.values[0], j)] = v
    return out


def _without_user(catalog, uid):
    return {k: Relation(r.columns, [row for row in r.rows if row[0] != uid], 0) for k, r in catalog.items()}


def test_c06_contribution_bounding(verdict):
    rng = np.random.default_rng(106)
    worst, bad_rows = 0.0, 0
    for case in range(200):
        catalog = _random_catalog(rng)
        cu = int(rng.integers(1, 4))
        plan = plan_query(SQL6, catalog, QueryConfig(epsilon=1.0, delta=0.1, cu=cu))
        t_rel = evaluate(plan.query.subquery, catalog, RandomSource(case).child("subquery"))
        u_rel = run_per_user_stage(plan, t_rel, RandomSource(case).child("reservoir"))
        check_contribution_bounds(u_rel, 1, cu)
        per_user = defaultdict(list)
        for row in u_rel.rows:
            per_user[row[0]].append(row[1])
        bad_rows += sum(len(gs) > cu or len(set(gs)) != len(gs) for gs in per_user.values())

        full = _exact_outputs(catalog, cu, case)
        for uid in {r[0] for r in catalog["A"].rows}:
            reduced = _exact_outputs(_without_user(catalog, uid), cu, case)
            l1 = sum(abs(full.get(k, 0.0) - reduced.get(k, 0.0)) for k in set(full) | set(reduced))
            worst = max(worst, l1 / (cu * SENS6))
    ok = bad_rows == 0 and worst <= 1 + 1e-9
    verdict(6, ok, f"200 cases, U-stage violations {bad_rows}, max L1 delta / (Cu * sum M) = {worst:.3f}")


# 7 -------------------------------------------------------------------------------

WITNESS = ((-0.375, -0.0556, 0.3), (-0.375, -0.0556))


def test_c07_stochastic_tester(verdict):
    start = time.perf_counter()
    cfg = TesterConfig()
    broken = run_named("broken_avg", cfg)
    # a passing primitive walks the whole corpus; time the slowest one
    full_runs = {}
    for name in ("anon_count", "anon_sum", "anon_avg", "anon_var", "anon_stddev", "anon_median"):
        t0 = time.perf_counter()
        run_named(name, cfg)
        full_runs[name] = time.perf_counter() - t0
    slowest = max(full_runs, key=full_runs.get)
    full_run = full_runs[slowest]

    def rounded(db):
        return tuple(round(x, 4) for x in db)

    pairs = {(rounded(d), rounded(s)) for d in corpus(cfg) for s in successors(d)}
    witness_in_corpus = WITNESS in pairs
    f = get_primitive("broken_avg", cfg.epsilon, cfg.bounds)
    root = next(d for d in corpus(cfg) if rounded(d) == WITNESS[0])
    child = next(s for s in successors(root) if rounded(s) == WITNESS[1])
    witness_fails = not dp_predicate_test(
        f.sample(root, RandomSource(7).child("a"), cfg.samples),
        f.sample(child, RandomSource(7).child("b"), cfg.samples),
        cfg,
    ).passed

    flakes = {}
    for name in ("anon_count", "anon_sum", "anon_avg"):
        flakes[name] = sum(not run_named(name, TesterConfig(seed=s)).passed for s in range(100))
    elapsed = time.perf_counter() - start
    ok = (
        not broken.passed
        and witness_in_corpus
        and witness_fails
        and all(v <= 5 for v in flakes.values())
        and full_run < 300
    )
    verdict(
        7,
        ok,
        f"broken_avg fails: {not broken.passed} (witness pair in corpus: {witness_in_corpus}, fails there: {witness_fails}); "
        f"flakes/100 {flakes}; slowest full run {slowest} {full_run:.1f}s; total {elapsed:.0f}s",
    )


# 8 -------------------------------------------------------------------------------


def test_c08_approx_bounds(verdict):
    t = approx_bounds_threshold(1.0, 2, 1 - math.exp(-1))
    values = np.random.default_rng(108).integers(1, 101, 10_000)
    cfg = ApproxBoundsConfig(success_prob=1 - 1e-9)
    hits = sum(approx_bounds(values, cfg, 1.0, RandomSource(s)) == ClampBounds(1.0, 128.0) for s in range(1000))
    ok = abs(t - 1) <= 1e-9 and hits >= 990
    verdict(8, ok, f"t = {t!r}; bounds (1, 128) in {hits}/1000 runs")


# 9 -------------------------------------------------------------------------------


def test_c09_golden_plans(verdict):
    cfg = QueryConfig(epsilon=1.0, delta=1e-5, cu=1)
    fig1 = load_catalog(DATA / "fig1")
    p4 = explain(LISTING4, load_catalog(DATA / "listing4"), cfg)
    p5 = explain(LISTING5, fig1, cfg)
    g4 = p4 == (GOLDEN / "listing4_plan.txt").read_text()
    g5 = p5 == (GOLDEN / "listing5_plan.txt").read_text()
    table = run_query(LISTING5, fig1, QueryConfig(delta=0.05, cu=1, tau=2.0, noiseless=True), seed=0)
    depts = [r.values[0] for r in table.rows]
    ok = g4 and g5 and "IT" not in depts and depts == ["Eng", "Sales"]
    verdict(9, ok, f"listing 4 golden: {g4}, listing 5 golden: {g5}; released departments {depts}")


# 10 ------------------------------------------------------------------------------


def test_c10_determinism(verdict, tmp_path):
    query = tmp_path / "q.sql"
    query.write_text(LISTING4)
    cmd = [
        sys.executable, "-m", "dpquery", "run", "--data", str(DATA / "listing4"),
        "--query", str(query), "--seed", "2024", "--delta", "0.2",
    ]
    first = subprocess.run(cmd, capture_output=True, check=True).stdout
    second = subprocess.run(cmd, capture_output=True, check=True).stdout
    verdict(10, first == second and len(first) > 0, f"two runs, {len(first)} bytes each, identical: {first == second}")


# 11 ------------------------------------------------------------------------------


def test_c11_nan_hardening(verdict):
    catalog = load_catalog(DATA / "fig1")
    safe = "SELECT WITH ANONYMIZATION dept, ANON_SUM(0, 0, 5) AS s FROM Employee E, Order O USING(uid) GROUP BY dept"
    cfg = QueryConfig(epsilon=1.0, delta=0.2, tau=1.5)
    mismatches, runs = 0, 0
    for k in range(1, 8):
        attack = safe.replace("ANON_SUM(0,", f"ANON_SUM(IF uid = {k} THEN 0/0 ELSE 0,")
        for seed in range(50):
            a = run_query(attack, catalog, cfg, seed=seed)
            b = run_query(safe, catalog, cfg, seed=seed)
            runs += 1
            mismatches += (a.rows, a.suppressed_count) != (b.rows, b.suppressed_count)
    verdict(11, mismatches == 0, f"{runs} seeded attack/baseline pairs, {mismatches} differing outputs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
