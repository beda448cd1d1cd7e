from __future__ import annotations

import math
from collections import Counter

import pytest
from scipy import stats

from dpquery.errors import OwnershipError, TypeMismatchError
from dpquery.expr import Binary, ColumnRef, Literal
from dpquery.noise import RandomSource
from dpquery.relational import (
    Column,
    PlainAgg,
    Relation,
    cross_join,
    group_aggregate,
    join_using_uid,
    project,
    reservoir_per_user,
    select,
    sort_key,
)


def owned(names, rows, uid=0, types=None, table=None):
    types = types or ["int"] * len(names)
    quals = frozenset({table}) if table else frozenset()
    return Relation(tuple(Column(n, t, quals) for n, t in zip(names, types)), rows, uid)


@pytest.fixture
def people():
    return owned(["uid", "a", "b"], [(1, 10, 5), (1, 20, 6), (2, 30, 7), (3, 40, 8)])


def test_project_keeps_uid_implicitly(people):
    out = project(people, ["a", "b"])
    assert len(out) == 4 and out.names == ["a", "b", "uid"] and out.uid == 2


def test_project_unowned_needs_no_uid(people):
    out = project(people.disowned(), ["a"])
    assert out.names == ["a"] and not out.owned


def test_project_refuses_to_drop_uid(people):
    with pytest.raises(OwnershipError):
        project(people, ["a"], keep_uid=False)


def test_select_identity_and_empty(people):
    assert select(people, Literal(True)).rows == people.rows
    assert len(select(people, Literal(False))) == 0
    with pytest.raises(TypeMismatchError):
        select(people, ColumnRef("a"))


def test_faulting_predicate_filters_silently(people):
    nan_test = Binary(">", Binary("/", Literal(0), Literal(0)), Literal(0))
    assert len(select(people, nan_test)) == 0
    modulo = Binary("=", Binary("%", ColumnRef("a"), Literal(0)), Literal(0))
    assert len(select(people, modulo)) == 0


def test_group_by_uid_counts():
    rel = owned(["uid", "x"], [("u1", 1), ("u1", 2), ("u2", 3)], types=["text", "int"])
    out = group_aggregate(rel, ["uid"], [PlainAgg("COUNT", None, "n")])
    assert out.rows == (("u1", 2), ("u2", 1)) and out.owned


def test_group_without_uid_is_refused(people):
    with pytest.raises(OwnershipError):
        group_aggregate(people, ["a"], [PlainAgg("COUNT", None, "n")])
    assert len(group_aggregate(owned(["uid", "a"], []), ["uid"], [PlainAgg("SUM", ColumnRef("a"), "s")])) == 0


def test_plain_aggregates():
    rel = Relation((Column("g", "text"), Column("v", "float")), [("x", 1.0), ("x", 3.0), ("y", None), ("x", 3.0)])
    aggs = [
        PlainAgg("COUNT", None, "n"),
        PlainAgg("COUNT", ColumnRef("v"), "nv"),
        PlainAgg("COUNT", ColumnRef("v"), "nd", distinct=True),
        PlainAgg("SUM", ColumnRef("v"), "s"),
        PlainAgg("AVG", ColumnRef("v"), "m"),
        PlainAgg("MAX", ColumnRef("v"), "hi"),
        PlainAgg("QUANTILE", ColumnRef("v"), "q", param=0.5),
    ]
    out = group_aggregate(rel, ["g"], aggs)
    assert out.rows[0] == ("x", 3, 3, 2, 7.0, 7 / 3, 3.0, 3.0)
    assert out.rows[1] == ("y", 1, 0, 0, None, None, None, None)


FIG1_EMPLOYEE = owned(
    ["uid", "dept"], [(1, "Eng"), (2, "Eng"), (3, "IT"), (4, "Sales")], types=["int", "text"], table="E"
)
FIG1_ORDER = owned(["uid", "item"], [(1, "a"), (1, "b"), (3, "c"), (5, "d")], types=["int", "text"], table="O")


def test_uid_join_matches_nested_loop_oracle():
    out = join_using_uid(FIG1_EMPLOYEE, FIG1_ORDER)
    oracle = [(e[0], e[1], o[1]) for e in FIG1_EMPLOYEE.rows for o in FIG1_ORDER.rows if e[0] == o[0]]
    assert sorted(out.rows) == sorted(oracle)
    assert out.owned and out.uid_column.qualifiers == {"E", "O"}


def test_uid_join_edge_cases():
    other = owned(["uid", "item"], [(9, "z")], types=["int", "text"])
    assert len(join_using_uid(FIG1_EMPLOYEE, other)) == 0
    assert len(join_using_uid(FIG1_EMPLOYEE, FIG1_ORDER, Literal(False))) == 0
    with pytest.raises(OwnershipError):
        join_using_uid(FIG1_EMPLOYEE, FIG1_ORDER.disowned())
    with pytest.raises(OwnershipError):
        cross_join(FIG1_EMPLOYEE, FIG1_ORDER.disowned())
    assert len(cross_join(FIG1_EMPLOYEE.disowned(), FIG1_ORDER.disowned())) == 16


def test_reservoir_small_users_untouched():
    rel = owned(["uid", "x"], [(1, 1), (1, 2), (1, 3)])
    assert reservoir_per_user(rel, 5, RandomSource(0)).rows == rel.rows


def test_reservoir_is_uniform_over_subsets():
    rel = owned(["uid", "x"], [(1, 1), (1, 2), (1, 3)])
    trials = 30_000
    counts = Counter(
        tuple(r[1] for r in reservoir_per_user(rel, 2, RandomSource(s)).rows) for s in range(trials)
    )
    assert set(counts) == {(1, 2), (1, 3), (2, 3)}
    sigma = math.sqrt(trials * (1 / 3) * (2 / 3))
    for c in counts.values():
        assert abs(c - trials / 3) <= 3 * sigma
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_reservoir_cu1_leaves_one_row_per_user():
    joined = join_using_uid(FIG1_EMPLOYEE, FIG1_ORDER)
    out = reservoir_per_user(joined, 1, RandomSource(3))
    uids = [r[out.uid] for r in out.rows]
    assert sorted(uids) == sorted(set(r[0] for r in joined.rows))


def test_reservoir_sample_independent_of_other_users():
    a = owned(["uid", "x"], [(1, i) for i in range(6)])
    b = owned(["uid", "x"], [(0, 9), (0, 8), (0, 7)] + [(1, i) for i in range(6)])
    keep_a = reservoir_per_user(a, 2, RandomSource(11)).rows
    keep_b = [r for r in reservoir_per_user(b, 2, RandomSource(11)).rows if r[0] == 1]
    assert list(keep_a) == keep_b


def test_sort_key_total_order():
    values = ["b", None, 3, 1.5, math.nan, "a"]
    assert sorted(values, key=sort_key)[:1] == [None]
    assert sorted(values, key=sort_key)[-2:] == ["a", "b"]
