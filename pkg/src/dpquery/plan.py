"""Logical plan nodes, their evaluation, ownership validation and text rendering.

Node constructors compute the output schema eagerly (as an empty
``Relation``). Schema computation is lenient: a grouping or join that breaks
ownership simply yields an un-owned schema, and :func:`validate_ownership`
reports it. Evaluation uses the strict relational operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import OwnershipError, UnsupportedQueryError
from .expr import render_expr
from .noise import RandomSource
from .relational import (
    PlainAgg,
    Relation,
    cross_join,
    group_aggregate,
    join_using_uid,
    project,
    reservoir_per_user,
    select,
)

__all__ = [
    "Scan",
    "Project",
    "Select",
    "GroupAggregate",
    "Join",
    "Reservoir",
    "Alias",
    "AnonAggregate",
    "PlanNode",
    "Violation",
    "validate_ownership",
    "evaluate",
    "render_plan",
]


def _schema(rel: Relation) -> Relation:
    return Relation(rel.columns, (), rel.uid)


@dataclass(eq=False)
class Scan:
    table: str
    alias: str
    base: Relation
    owned: bool = True
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        names = {self.alias, self.table}
        cols = tuple(c.qualified(*names) for c in self.base.columns)
        if self.owned and not self.base.owned:
            raise OwnershipError(f"table {self.table} has no uid column", "scan")
        self.schema = Relation(cols, (), self.base.uid if self.owned else None)
        self.base = _schema(self.base)

    children = property(lambda self: ())


@dataclass(eq=False)
class Project:
    child: "PlanNode"
    items: tuple  # (expr, name) pairs
    keep_uid: bool = True
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        src = self.child.schema
        if not self.keep_uid:
            src = src.disowned()
        self.schema = project(src, self.items)

    children = property(lambda self: (self.child,))


@dataclass(eq=False)
class Select:
    child: "PlanNode"
    predicate: object
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        self.schema = select(self.child.schema, self.predicate)

    children = property(lambda self: (self.child,))


@dataclass(eq=False)
class GroupAggregate:
    child: "PlanNode"
    keys: tuple  # ColumnRef
    aggs: tuple  # PlainAgg
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        src = self.child.schema
        if src.owned and not self.groups_by_uid:
            src = src.disowned()
        self.schema = group_aggregate(src, self.keys, self.aggs)

    @property
    def groups_by_uid(self) -> bool:
        src = self.child.schema
        if not src.owned:
            return False
        from .expr import resolve

        return any(resolve(src.columns, k) == src.uid for k in self.keys)

    children = property(lambda self: (self.child,))


@dataclass(eq=False)
class Join:
    left: "PlanNode"
    right: "PlanNode"
    condition: object = None  # residual predicate beyond the uid equality
    uid_equi: bool = False
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        l, r = self.left.schema, self.right.schema
        if self.uid_equi and l.owned and r.owned:
            self.schema = join_using_uid(l, r, self.condition)
        else:
            self.schema = cross_join(l.disowned(), r.disowned(), self.condition)

    children = property(lambda self: (self.left, self.right))


@dataclass(eq=False)
class Reservoir:
    child: "PlanNode"
    cu: int
    key: str | None = None
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        self.schema = self.child.schema

    children = property(lambda self: (self.child,))


@dataclass(eq=False)
class Alias:
    """Re-qualify every output column of a FROM-clause subquery with its alias."""

    child: "PlanNode"
    name: str
    schema: Relation = field(init=False, repr=False)

    def __post_init__(self):
        self.schema = self.child.schema.requalified(self.name)

    children = property(lambda self: (self.child,))


@dataclass(eq=False)
class AnonAggregate:
    """The anonymized group-and-aggregate operator, before expansion.

    ``outputs`` lists the select list as ``(name, kind, index)`` where kind is
    ``"key"`` or ``"agg"``.
    """

    child: "PlanNode"
    keys: tuple
    aggs: tuple  # planner.AnonAgg
    outputs: tuple

    @property
    def schema(self):
        raise UnsupportedQueryError("the anonymized aggregate has no plain schema")

    children = property(lambda self: (self.child,))


PlanNode = Union[Scan, Project, Select, GroupAggregate, Join, Reservoir, Alias, AnonAggregate]


@dataclass(frozen=True)
class Violation:
    node: object
    reason: str

    def __str__(self):
        return f"{type(self.node).__name__}: {self.reason}"


def validate_ownership(plan) -> Violation | None:
    """First node (pre-order) that could create rows of shared ownership, else None."""
    if isinstance(plan, AnonAggregate):
        return Violation(plan, "nested anonymized aggregation")
    if isinstance(plan, Scan):
        if not plan.owned:
            return Violation(plan, f"table {plan.table} is not user-owned")
    elif isinstance(plan, Project):
        if not plan.keep_uid or not plan.schema.owned:
            return Violation(plan, "projection must keep the uid column")
    elif isinstance(plan, GroupAggregate):
        if not plan.groups_by_uid:
            return Violation(plan, "grouping must include the uid column")
    elif isinstance(plan, Join):
        if not plan.uid_equi:
            return Violation(plan, "join condition must equate the uid of both sides (USING(uid))")
    for child in plan.children:
        found = validate_ownership(child)
        if found is not None:
            return found
    return None


def evaluate(plan, catalog: Mapping[str, Relation], rng: RandomSource) -> Relation:
    if isinstance(plan, Scan):
        try:
            rel = catalog[plan.table]
        except KeyError:
            from .errors import NameResolutionError

            raise NameResolutionError(f"unknown table {plan.table}") from None
        rel = Relation(plan.schema.columns, rel.rows, rel.uid)
        return rel if plan.owned else rel.disowned()
    if isinstance(plan, Project):
        child = evaluate(plan.child, catalog, rng)
        return project(child if plan.keep_uid else child.disowned(), plan.items, rng=rng.child("project"))
    if isinstance(plan, Select):
        return select(evaluate(plan.child, catalog, rng), plan.predicate, rng.child("select"))
    if isinstance(plan, GroupAggregate):
        return group_aggregate(evaluate(plan.child, catalog, rng), plan.keys, plan.aggs)
    if isinstance(plan, Join):
        l = evaluate(plan.left, catalog, rng.child("left"))
        r = evaluate(plan.right, catalog, rng.child("right"))
        if plan.uid_equi:
            return join_using_uid(l, r, plan.condition)
        return cross_join(l, r, plan.condition)
    if isinstance(plan, Alias):
        return evaluate(plan.child, catalog, rng).requalified(plan.name)
    if isinstance(plan, Reservoir):
        child = evaluate(plan.child, catalog, rng.child("input"))
        return reservoir_per_user(child, plan.cu, rng.child("reservoir"), plan.key)
    raise UnsupportedQueryError(f"{type(plan).__name__} is not directly executable")


def _agg_text(agg: PlainAgg) -> str:
    arg = "*" if agg.arg is None else render_expr(agg.arg)
    if agg.distinct:
        arg = "DISTINCT " + arg
    if agg.param is not None:
        arg += f", {agg.param:g}"
    return f"{agg.func}({arg}) AS {agg.alias}"


def _keys_text(keys) -> str:
    return ", ".join(render_expr(k) for k in keys)


def node_label(node) -> str:
    if isinstance(node, Scan):
        label = node.table if node.alias == node.table else f"{node.table} AS {node.alias}"
        return f"Scan[{label}]"
    if isinstance(node, Project):
        names = [n for _, n in node.items]
        if node.schema.owned and node.schema.uid >= len(names):
            names.append(f"{node.schema.uid_column.name} (implicit)")
        return f"Project[{', '.join(names)}]"
    if isinstance(node, Select):
        return f"Select[{render_expr(node.predicate)}]"
    if isinstance(node, GroupAggregate):
        return f"GroupAggregate[keys=({_keys_text(node.keys)}); {'; '.join(_agg_text(a) for a in node.aggs)}]"
    if isinstance(node, Join):
        cond = "USING(uid)" if node.uid_equi else "CROSS"
        if node.condition is not None:
            cond += f" AND {render_expr(node.condition)}"
        return f"Join[{cond}]"
    if isinstance(node, Reservoir):
        return f"Reservoir[partition={node.key or 'uid'}, rows={node.cu}]"
    if isinstance(node, Alias):
        return f"Alias[{node.name}]"
    if isinstance(node, AnonAggregate):
        return f"AnonAggregate[keys=({_keys_text(node.keys)})]"
    if hasattr(node, "label"):
        return node.label()
    raise TypeError(node)


def render_plan(node, indent: int = 0) -> str:
    """Stable indented text rendering, one node per line."""
    lines = ["  " * indent + node_label(node)]
    for child in node.children:
        lines.append(render_plan(child, indent + 1))
    return "\n".join(lines)

