"""SQL subset: tokenizer, parser, renderer and lowering onto plan trees."""

from .ast import JoinClause, Query, ReservoirSample, SelectItem, SubqueryRef, TableRef
from .lexer import Token, tokenize
from .lower import lower
from .parser import parse
from .render import render_query

__all__ = [
    "Query",
    "SelectItem",
    "TableRef",
    "SubqueryRef",
    "JoinClause",
    "ReservoirSample",
    "Token",
    "tokenize",
    "parse",
    "render_query",
    "lower",
]
