"""Tokenizer for the SQL subset."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import LexError

KEYWORDS = frozenset(
    """SELECT WITH FROM WHERE GROUP BY HAVING AS JOIN INNER USING ON AND OR NOT IS NULL
    TRUE FALSE CASE WHEN THEN ELSE END IF DISTINCT TABLESAMPLE""".split()
)

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<qident>"(?:[^"]|"")*")
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><>|!=|<=|>=|[(),;.*+\-/%=<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # KEYWORD, IDENT, INT, FLOAT, STRING, OP, EOF
    value: object
    offset: int

    def __str__(self):
        if self.kind == "EOF":
            return "end of input"
        return f"{self.kind} {self.value!r}"


def tokenize(text: str) -> list[Token]:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos] == "'":
                raise LexError("unterminated string literal", pos)
            if text[pos] == '"':
                raise LexError("unterminated quoted identifier", pos)
            raise LexError(f"illegal character {text[pos]!r}", pos)
        kind, raw = m.lastgroup, m.group()
        if kind == "number":
            if any(c in raw for c in ".eE"):
                tokens.append(Token("FLOAT", float(raw), pos))
            else:
                tokens.append(Token("INT", int(raw), pos))
        elif kind == "ident":
            upper = raw.upper()
            if upper in KEYWORDS:
                tokens.append(Token("KEYWORD", upper, pos))
            else:
                tokens.append(Token("IDENT", raw, pos))
        elif kind == "qident":
            tokens.append(Token("IDENT", raw[1:-1].replace('""', '"'), pos))
        elif kind == "string":
            tokens.append(Token("STRING", raw[1:-1].replace("''", "'"), pos))
        elif kind == "op":
            tokens.append(Token("OP", "<>" if raw == "!=" else raw, pos))
        pos = m.end()
    tokens.append(Token("EOF", None, len(text)))
    return tokens
