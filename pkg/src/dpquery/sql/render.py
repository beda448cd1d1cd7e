"""SQL text for :class:`~dpquery.sql.ast.Query` trees (inverse of parsing)."""

from __future__ import annotations

import re

from ..expr import render_expr
from .ast import JoinClause, Query, SubqueryRef
from .lexer import KEYWORDS

_PLAIN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def render_ident(name: str) -> str:
    if _PLAIN.match(name) and name.upper() not in KEYWORDS:
        return name
    return '"' + name.replace('"', '""') + '"'


def _from_item(item) -> str:
    if isinstance(item, SubqueryRef):
        text = f"({render_query(item.query, terminate=False)})"
    else:
        text = render_ident(item.name)
    if item.alias is not None:
        text += f" {render_ident(item.alias)}"
    if item.sample is not None:
        s = item.sample
        text += f" TABLESAMPLE RESERVOIR ({s.rows} ROWS PARTITION BY {render_ident(s.partition_by)})"
    return text


def _join(j: JoinClause) -> str:
    text = (", " if j.comma else " JOIN ") + _from_item(j.item)
    if j.using is not None:
        text += f" USING ({', '.join(render_ident(c) for c in j.using)})"
    elif j.on is not None:
        text += f" ON {render_expr(j.on)}"
    return text


def render_query(q: Query, terminate: bool = True) -> str:
    head = "SELECT WITH ANONYMIZATION " if q.anonymized else "SELECT "
    items = ", ".join(
        render_expr(i.expr) + ("" if i.alias is None else f" AS {render_ident(i.alias)}") for i in q.items
    )
    text = head + items + " FROM " + _from_item(q.source) + "".join(_join(j) for j in q.joins)
    if q.where is not None:
        text += f" WHERE {render_expr(q.where)}"
    if q.group_by:
        text += " GROUP BY " + ", ".join(render_expr(k) for k in q.group_by)
    if q.having is not None:
        text += f" HAVING {render_expr(q.having)}"
    return text + (";" if terminate else "")
