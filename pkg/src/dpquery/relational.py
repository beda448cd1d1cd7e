"""In-memory relations with user ownership, and the ownership-preserving operators.

An *owned* relation has a uid column; every row belongs to exactly one user.
The operators here only accept the variants that keep it that way: grouping
must include the uid, joins must equate uids, projections keep the uid.
Un-owned relations (plain, non-anonymized queries) are unrestricted.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .errors import OwnershipError, TypeMismatchError, UnsupportedQueryError
from .expr import ColumnRef, compile_expr, guarded, infer_type, resolve
from .noise import RandomSource

__all__ = [
    "Column",
    "Relation",
    "PlainAgg",
    "project",
    "select",
    "group_aggregate",
    "join_using_uid",
    "cross_join",
    "reservoir_per_user",
    "sort_key",
]


@dataclass(frozen=True)
class Column:
    name: str
    type: str
    qualifiers: frozenset = frozenset()

    def qualified(self, *names: str) -> "Column":
        return replace(self, qualifiers=frozenset(names))


@dataclass(frozen=True)
class Relation:
    columns: tuple[Column, ...]
    rows: tuple[tuple, ...] = ()
    uid: int | None = None  # index of the uid column; None when un-owned

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        width = len(self.columns)
        for r in self.rows:
            if len(r) != width:
                raise ValueError(f"row {r!r} does not match schema of width {width}")
        if self.uid is not None:
            for r in self.rows:
                if r[self.uid] is None:
                    raise OwnershipError("owned relation has a row without uid")

    @property
    def owned(self) -> bool:
        return self.uid is not None

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def uid_column(self) -> Column | None:
        return None if self.uid is None else self.columns[self.uid]

    def __len__(self):
        return len(self.rows)

    def column_values(self, name: str) -> list:
        idx = resolve(self.columns, ColumnRef(name))
        return [r[idx] for r in self.rows]

    def disowned(self) -> "Relation":
        return Relation(self.columns, self.rows, None)

    def requalified(self, *names: str) -> "Relation":
        return Relation(tuple(c.qualified(*names) for c in self.columns), self.rows, self.uid)


def sort_key(value) -> tuple:
    """Total order over mixed SQL values: NULLs first, then numbers, then text."""
    if value is None:
        return (0, 0)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (1, -math.inf) if value != value else (1, value)
    return (2, str(value))


def _is_uid_ref(rel: Relation, expr) -> bool:
    if not rel.owned or not isinstance(expr, ColumnRef):
        return False
    try:
        return resolve(rel.columns, expr) == rel.uid
    except Exception:
        return False


def project(rel: Relation, items: Sequence, *, keep_uid: bool = True, rng: RandomSource | None = None) -> Relation:
    """Per-row projection. ``items`` are column names or ``(expr, name)`` pairs.

    On an owned relation the uid column is carried along even when not
    named; asking to drop it is an ownership violation.
    """
    if rel.owned and not keep_uid:
        raise OwnershipError("projection would drop the uid column", "project")
    pairs = [(ColumnRef(i), i) if isinstance(i, str) else i for i in items]
    out_cols, fns = [], []
    uid_out = None
    for expr, name in pairs:
        t = infer_type(expr, rel.columns)
        if isinstance(expr, ColumnRef):
            src = rel.columns[resolve(rel.columns, expr)]
            col = Column(name, t, src.qualifiers if name == src.name else frozenset())
        else:
            col = Column(name, t)
        if uid_out is None and _is_uid_ref(rel, expr):
            uid_out = len(out_cols)
        out_cols.append(col)
        fns.append(guarded(compile_expr(expr, rel.columns, rng), None, f"projection of {name}"))
    if rel.owned and uid_out is None:
        uid_out = len(out_cols)
        out_cols.append(rel.uid_column)
        fns.append(lambda row, i=rel.uid: row[i])
    rows = tuple(tuple(f(r) for f in fns) for r in rel.rows)
    return Relation(tuple(out_cols), rows, uid_out)


def select(rel: Relation, predicate, rng: RandomSource | None = None) -> Relation:
    """Keep rows where ``predicate`` is TRUE; faults and NULL count as false."""
    if infer_type(predicate, rel.columns) not in ("bool", "null"):
        raise TypeMismatchError("WHERE predicate must be boolean")
    test = guarded(compile_expr(predicate, rel.columns, rng), False, "selection predicate")
    return Relation(rel.columns, tuple(r for r in rel.rows if test(r) is True), rel.uid)


@dataclass(frozen=True)
class PlainAgg:
    """Ordinary (non-private) aggregate: ``func(arg)`` named ``alias``."""

    func: str
    arg: Any = None  # expression; None means ``*``
    alias: str = ""
    distinct: bool = False
    param: float | None = None  # quantile level for QUANTILE


def _plain_aggregate(agg: PlainAgg, values: list):
    f = agg.func
    if f == "COUNT":
        if agg.arg is None:
            return len(values)
        vals = [v for v in values if v is not None]
        return len(set(vals)) if agg.distinct else len(vals)
    vals = [v for v in values if v is not None]
    if agg.distinct:
        vals = list(dict.fromkeys(vals))
    if not vals:
        return None
    if f == "SUM":
        return sum(vals)
    if f == "MIN":
        return min(vals, key=sort_key)
    if f == "MAX":
        return max(vals, key=sort_key)
    arr = np.asarray(vals, dtype=float)
    if f == "AVG":
        return float(arr.mean())
    if f == "VAR":
        return float(arr.var())
    if f == "STDDEV":
        return float(arr.std())
    if f == "QUANTILE":
        return float(np.quantile(arr, agg.param))
    raise UnsupportedQueryError(f"unknown aggregate {f}")


def _agg_type(agg: PlainAgg, rel: Relation) -> str:
    if agg.func == "COUNT":
        return "int"
    t = "null" if agg.arg is None else infer_type(agg.arg, rel.columns)
    if agg.func in ("MIN", "MAX"):
        return t
    if agg.func == "SUM" and t == "int":
        return "int"
    if t not in ("int", "float", "null"):
        raise TypeMismatchError(f"{agg.func} applied to {t}")
    return "float"


def group_aggregate(rel: Relation, keys: Sequence, aggs: Sequence[PlainAgg]) -> Relation:
    """One output row per distinct key vector with the plain aggregates appended.

    An owned input must be grouped by (at least) its uid so that no output row
    mixes users; the output stays owned.
    """
    key_refs = [ColumnRef(k) if isinstance(k, str) else k for k in keys]
    key_idx = [resolve(rel.columns, k) for k in key_refs]
    if rel.owned and rel.uid not in key_idx:
        raise OwnershipError("grouping an owned relation must include the uid", "group_aggregate")
    arg_fns = [
        None if a.arg is None else guarded(compile_expr(a.arg, rel.columns), None, f"argument of {a.func}")
        for a in aggs
    ]
    groups: dict[tuple, list[tuple]] = defaultdict(list)
    for r in rel.rows:
        groups[tuple(r[i] for i in key_idx)].append(r)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(sort_key(v) for v in k)):
        members = groups[key]
        out = list(key)
        for agg, fn in zip(aggs, arg_fns):
            vals = members if fn is None else [fn(m) for m in members]
            out.append(_plain_aggregate(agg, vals))
        rows.append(tuple(out))
    cols = tuple(rel.columns[i] for i in key_idx) + tuple(Column(a.alias, _agg_type(a, rel)) for a in aggs)
    uid = key_idx.index(rel.uid) if rel.owned else None
    return Relation(cols, tuple(rows), uid)


def join_using_uid(left: Relation, right: Relation, extra_condition=None, rng=None) -> Relation:
    """Inner equi-join on uid, optionally filtered by ``extra_condition``.

    The output keeps a single uid column (qualified by both sides) and is owned.
    """
    if not (left.owned and right.owned):
        raise OwnershipError("uid join needs two owned relations", "join")
    lu, ru = left.uid_column, right.uid_column
    merged_uid = Column(lu.name, lu.type, lu.qualifiers | ru.qualifiers)
    right_keep = [i for i in range(len(right.columns)) if i != right.uid]
    cols = list(left.columns)
    cols[left.uid] = merged_uid
    cols += [right.columns[i] for i in right_keep]
    by_uid: dict[Any, list[tuple]] = defaultdict(list)
    for r in right.rows:
        by_uid[r[right.uid]].append(r)
    rows = [
        l + tuple(r[i] for i in right_keep) for l in left.rows for r in by_uid.get(l[left.uid], ())
    ]
    out = Relation(tuple(cols), tuple(rows), left.uid)
    if extra_condition is not None:
        out = select(out, extra_condition, rng)
    return out


def cross_join(left: Relation, right: Relation, condition=None, rng=None) -> Relation:
    """Unrestricted join for plain queries; refuses owned inputs."""
    if left.owned or right.owned:
        raise OwnershipError("join between owned relations must equate uids", "join")
    rows = [l + r for l in left.rows for r in right.rows]
    out = Relation(left.columns + right.columns, tuple(rows), None)
    if condition is not None:
        out = select(out, condition, rng)
    return out


def reservoir_per_user(rel: Relation, cu: int, rng: RandomSource, key: str | None = None) -> Relation:
    """Keep at most ``cu`` rows per user, chosen uniformly without replacement.

    Rows are visited in (uid, input position) order and each user draws from
    its own ``uid:<value>`` substream, so a user's sample does not depend on
    which other users are present.
    """
    if cu < 1:
        raise ValueError("cu must be >= 1")
    if key is not None:
        part = resolve(rel.columns, ColumnRef(key))
    elif rel.owned:
        part = rel.uid
    else:
        raise OwnershipError("reservoir sampling needs an owned relation", "reservoir")
    by_user: dict[Any, list[int]] = defaultdict(list)
    for i, r in enumerate(rel.rows):
        by_user[r[part]].append(i)
    kept: list[int] = []
    for uid in sorted(by_user, key=sort_key):
        positions = by_user[uid]
        if len(positions) <= cu:
            kept.extend(positions)
            continue
        sub = rng.child(f"uid:{uid!r}")
        reservoir = positions[:cu]
        for seen in range(cu, len(positions)):
            j = sub.integers(0, seen + 1)
            if j < cu:
                reservoir[j] = positions[seen]
        kept.extend(sorted(reservoir))
    return Relation(rel.columns, tuple(rel.rows[i] for i in kept), rel.uid)
