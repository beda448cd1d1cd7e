"""Lowering of parsed queries into plan trees.

Anonymized queries become an :class:`~dpquery.plan.AnonAggregate` over an
owned subquery plan; plain queries lower onto un-owned scans and run as
ordinary SQL.
"""

from __future__ import annotations

from typing import Mapping

from ..errors import NameResolutionError, OwnershipError, UnsupportedQueryError
from ..expr import (
    AGGREGATE_FUNCS,
    AnonCall,
    Binary,
    Case,
    ColumnRef,
    Func,
    IsNull,
    Literal,
    Star,
    Unary,
    contains_aggregate,
    resolve,
    walk,
)
from ..plan import (
    Alias,
    AnonAggregate,
    GroupAggregate,
    Join,
    Project,
    Reservoir,
    Scan,
    Select,
    validate_ownership,
)
from ..planner import _lookup, anon_agg_from_call
from ..relational import PlainAgg, Relation
from .ast import JoinClause, Query, SubqueryRef

__all__ = ["lower", "output_name"]


def output_name(expr, alias: str | None, position: int) -> str:
    if alias is not None:
        return alias
    if isinstance(expr, ColumnRef):
        return expr.name
    if isinstance(expr, AnonCall):
        return f"anon_{expr.kind.lower()}"
    if isinstance(expr, Func):
        return expr.name.lower()
    return f"col{position + 1}"


def lower(query: Query, catalog: Mapping[str, Relation]):
    """Plan for ``query``. Ownership violations below an anonymized aggregate raise."""
    if query.anonymized:
        return _lower_anonymized(query, catalog)
    return _lower_plain(query, catalog, owned=False)


# -- FROM clause ----------------------------------------------------------------------


def _from_item(item, catalog, owned: bool):
    if isinstance(item, SubqueryRef):
        if item.query.anonymized:
            raise UnsupportedQueryError("anonymized subqueries are not supported")
        node = _lower_plain(item.query, catalog, owned)
        if item.alias is not None:
            node = Alias(node, item.alias)
    else:
        base = _lookup(catalog, item.name)
        if owned and not base.owned:
            raise OwnershipError(f"table {item.name} has no uid column", "Scan")
        node = Scan(item.name, item.alias or item.name, base, owned)
    if item.sample is not None:
        node = Reservoir(node, item.sample.rows, item.sample.partition_by)
    return node


def _conjuncts(expr):
    if isinstance(expr, Binary) and expr.op == "AND":
        return _conjuncts(expr.left) + _conjuncts(expr.right)
    return [expr]


def _and_all(parts):
    out = None
    for p in parts:
        out = p if out is None else Binary("AND", out, p)
    return out


def _side_uid(schema: Relation, ref) -> bool:
    if not schema.owned or not isinstance(ref, ColumnRef):
        return False
    try:
        return resolve(schema.columns, ref) == schema.uid
    except NameResolutionError:
        return False


def _join(left, clause: JoinClause, catalog, owned: bool):
    right = _from_item(clause.item, catalog, owned)
    ls, rs = left.schema, right.schema
    if clause.using is not None:
        uid_cols = [c for c in clause.using if _using_is_uid(ls, rs, c)]
        rest = [c for c in clause.using if c not in uid_cols]
        cond = _and_all(_using_equality(ls, rs, c) for c in rest)
        return Join(left, right, cond, uid_equi=bool(uid_cols) and owned)
    if clause.on is not None:
        parts = _conjuncts(clause.on)
        for i, p in enumerate(parts):
            if isinstance(p, Binary) and p.op == "=":
                if (_side_uid(ls, p.left) and _side_uid(rs, p.right)) or (
                    _side_uid(ls, p.right) and _side_uid(rs, p.left)
                ):
                    residual = _and_all(parts[:i] + parts[i + 1 :])
                    return Join(left, right, residual, uid_equi=owned)
        return Join(left, right, clause.on, uid_equi=False)
    return Join(left, right, None, uid_equi=False)


def _using_is_uid(ls: Relation, rs: Relation, col: str) -> bool:
    return _side_uid(ls, ColumnRef(col)) and _side_uid(rs, ColumnRef(col))


def _qualified_ref(schema: Relation, col: str) -> ColumnRef:
    c = schema.columns[resolve(schema.columns, ColumnRef(col))]
    if not c.qualifiers:
        return ColumnRef(c.name)
    return ColumnRef(c.name, sorted(c.qualifiers)[0])


def _using_equality(ls: Relation, rs: Relation, col: str):
    return Binary("=", _qualified_ref(ls, col), _qualified_ref(rs, col))


def _from_clause(query: Query, catalog, owned: bool):
    node = _from_item(query.source, catalog, owned)
    for clause in query.joins:
        node = _join(node, clause, catalog, owned)
    if query.where is not None:
        if contains_aggregate(query.where):
            raise UnsupportedQueryError("aggregates are not allowed in WHERE")
        node = Select(node, query.where)
    return node


# -- plain queries -----------------------------------------------------------------


def _agg_calls(expr):
    return [e for e in walk(expr) if isinstance(e, Func) and e.name in AGGREGATE_FUNCS]


def _replace(expr, mapping):
    """Copy of ``expr`` with sub-trees found in ``mapping`` substituted."""
    if expr in mapping:
        return mapping[expr]
    if isinstance(expr, Unary):
        return Unary(expr.op, _replace(expr.operand, mapping))
    if isinstance(expr, Binary):
        return Binary(expr.op, _replace(expr.left, mapping), _replace(expr.right, mapping))
    if isinstance(expr, IsNull):
        return IsNull(_replace(expr.operand, mapping), expr.negated)
    if isinstance(expr, Case):
        whens = tuple((_replace(c, mapping), _replace(v, mapping)) for c, v in expr.whens)
        default = None if expr.default is None else _replace(expr.default, mapping)
        return Case(whens, default)
    if isinstance(expr, Func):
        return Func(expr.name, tuple(_replace(a, mapping) for a in expr.args), expr.distinct)
    return expr


def _plain_agg(call: Func, alias: str) -> PlainAgg:
    args = call.args
    if call.name == "QUANTILE":
        if len(args) != 2 or not isinstance(args[1], Literal):
            raise UnsupportedQueryError("QUANTILE takes (expr, literal level)")
        return PlainAgg("QUANTILE", args[0], alias, call.distinct, float(args[1].value))
    if len(args) != 1:
        raise UnsupportedQueryError(f"{call.name} takes one argument")
    if any(contains_aggregate(a) for a in args):
        raise UnsupportedQueryError("nested aggregates are not supported")
    arg = None if isinstance(args[0], Star) else args[0]
    return PlainAgg(call.name, arg, alias, call.distinct)


def _lower_plain(query: Query, catalog, owned: bool):
    if any(isinstance(e, AnonCall) for i in query.items for e in walk(i.expr)):
        raise UnsupportedQueryError("ANON_ aggregates require SELECT WITH ANONYMIZATION")
    node = _from_clause(query, catalog, owned)
    names = [output_name(i.expr, i.alias, n) for n, i in enumerate(query.items)]
    grouped = bool(query.group_by) or any(contains_aggregate(i.expr) for i in query.items)
    if query.having is not None and not grouped:
        raise UnsupportedQueryError("HAVING needs GROUP BY or an aggregate")
    if not grouped:
        return Project(node, tuple((i.expr, n) for i, n in zip(query.items, names)))

    keys = []
    for k in query.group_by:
        if not isinstance(k, ColumnRef):
            raise UnsupportedQueryError("GROUP BY accepts column references only")
        keys.append(k)
    # one plain aggregate per distinct call, named _agg1, _agg2, ...
    mapping, aggs = {}, []
    having = query.having
    if having is not None:
        # select-list aliases may be used in HAVING
        by_alias = {i.alias.casefold(): i.expr for i in query.items if i.alias}
        having = _substitute_aliases(having, by_alias)
    for expr in [i.expr for i in query.items] + ([having] if having is not None else []):
        for call in _agg_calls(expr):
            if call not in mapping:
                alias = f"_agg{len(aggs) + 1}"
                aggs.append(_plain_agg(call, alias))
                mapping[call] = ColumnRef(alias)
    node = GroupAggregate(node, tuple(keys), tuple(aggs))
    key_cols = {node.schema.columns[i].name.casefold() for i in range(len(keys))}
    for item in query.items:
        _check_grouped(_replace(item.expr, mapping), key_cols)
    if having is not None:
        node = Select(node, _replace(having, mapping))
    items = tuple((_replace(i.expr, mapping), n) for i, n in zip(query.items, names))
    return Project(node, items)


def _substitute_aliases(expr, by_alias):
    refs = {e: by_alias[e.name.casefold()] for e in walk(expr) if isinstance(e, ColumnRef) and e.table is None and e.name.casefold() in by_alias}
    return _replace(expr, refs)


def _check_grouped(expr, key_cols):
    for e in walk(expr):
        if isinstance(e, ColumnRef) and not e.name.startswith("_agg") and e.name.casefold() not in key_cols:
            raise UnsupportedQueryError(f"column {e.name} must appear in GROUP BY or inside an aggregate")


# -- anonymized queries ------------------------------------------------------------


def _lower_anonymized(query: Query, catalog):
    subplan = _from_clause(query, catalog, owned=True)
    violation = validate_ownership(subplan)
    if violation is not None:
        raise OwnershipError(violation.reason, type(violation.node).__name__)
    schema = subplan.schema
    keys = []
    key_idx = []
    for k in query.group_by:
        if not isinstance(k, ColumnRef):
            raise UnsupportedQueryError("GROUP BY accepts column references only")
        idx = resolve(schema.columns, k)
        if idx == schema.uid:
            raise UnsupportedQueryError("anonymized queries cannot group by the uid column")
        keys.append(k)
        key_idx.append(idx)
    aggs, outputs = [], []
    for n, item in enumerate(query.items):
        name = output_name(item.expr, item.alias, n)
        if isinstance(item.expr, AnonCall):
            for e in walk(item.expr.arg):
                if isinstance(e, AnonCall) or (isinstance(e, Func) and e.name in AGGREGATE_FUNCS):
                    raise UnsupportedQueryError("aggregates cannot be nested inside ANON_ functions")
            aggs.append(anon_agg_from_call(item.expr, name))
            outputs.append((name, "agg", len(aggs) - 1))
        elif isinstance(item.expr, ColumnRef):
            idx = resolve(schema.columns, item.expr)
            if idx not in key_idx:
                raise UnsupportedQueryError(
                    f"column {item.expr.name} must appear in GROUP BY of an anonymized query"
                )
            outputs.append((name, "key", key_idx.index(idx)))
        else:
            raise UnsupportedQueryError(
                "anonymized select items must be GROUP BY columns or ANON_ aggregates"
            )
    if not aggs:
        raise UnsupportedQueryError("an anonymized query needs at least one ANON_ aggregate")
    return AnonAggregate(subplan, tuple(keys), tuple(aggs), tuple(outputs))
