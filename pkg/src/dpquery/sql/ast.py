"""Syntax tree of the supported SQL subset."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class SelectItem:
    expr: object
    alias: str | None = None


@dataclass(frozen=True)
class ReservoirSample:
    """``TABLESAMPLE RESERVOIR (n ROWS PARTITION BY col)``; debug mode only."""

    rows: int
    partition_by: str


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str | None = None
    sample: ReservoirSample | None = None


@dataclass(frozen=True)
class SubqueryRef:
    query: "Query"
    alias: str | None = None
    sample: ReservoirSample | None = None


FromItem = Union[TableRef, SubqueryRef]


@dataclass(frozen=True)
class JoinClause:
    item: FromItem
    comma: bool = True  # "," versus JOIN
    using: tuple[str, ...] | None = None
    on: object = None


@dataclass(frozen=True)
class Query:
    items: tuple[SelectItem, ...]
    source: FromItem
    joins: tuple[JoinClause, ...] = ()
    where: object = None
    group_by: tuple = ()
    having: object = None
    anonymized: bool = False
