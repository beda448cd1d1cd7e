"""Recursive-descent parser producing :class:`~dpquery.sql.ast.Query` trees."""

from __future__ import annotations

from ..aggregates import AggKind
from ..errors import ParseError
from ..expr import (
    AGGREGATE_FUNCS,
    SCALAR_FUNCS,
    AnonCall,
    Binary,
    Case,
    ColumnRef,
    Func,
    IsNull,
    Literal,
    Star,
    Unary,
)
from .ast import JoinClause, Query, ReservoirSample, SelectItem, SubqueryRef, TableRef
from .lexer import Token, tokenize

__all__ = ["parse"]

_COMPARE = ("=", "<>", "<", "<=", ">", ">=")


class _Parser:
    def __init__(self, tokens: list[Token], debug: bool):
        self.tokens = tokens
        self.pos = 0
        self.debug = debug
        self.anonymized = [False]

    # token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def is_kw(self, *words: str) -> bool:
        return self.tok.kind == "KEYWORD" and self.tok.value in words

    def is_op(self, *ops: str) -> bool:
        return self.tok.kind == "OP" and self.tok.value in ops

    def is_soft(self, word: str) -> bool:
        return self.tok.kind == "IDENT" and self.tok.value.upper() == word

    def error(self, message: str, *expected: str):
        raise ParseError(f"{message}, found {self.tok}", self.tok.offset, tuple(expected))

    def expect_kw(self, word: str) -> Token:
        if not self.is_kw(word):
            self.error(f"expected {word}", word)
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.is_op(op):
            self.error(f"expected '{op}'", op)
        return self.advance()

    def expect_soft(self, word: str) -> Token:
        if not self.is_soft(word):
            self.error(f"expected {word}", word)
        return self.advance()

    def ident(self) -> str:
        if self.tok.kind != "IDENT":
            self.error("expected an identifier", "identifier")
        return self.advance().value

    # statements

    def statement(self) -> Query:
        q = self.query()
        if self.is_op(";"):
            self.advance()
        if self.tok.kind != "EOF":
            self.error("unexpected trailing input", "end of input")
        return q

    def query(self) -> Query:
        self.expect_kw("SELECT")
        anonymized = False
        if self.is_kw("WITH"):
            self.advance()
            self.expect_soft("ANONYMIZATION")
            anonymized = True
        self.anonymized.append(anonymized)
        try:
            items = [self.select_item()]
            while self.is_op(","):
                self.advance()
                items.append(self.select_item())
            self.expect_kw("FROM")
            source = self.from_item()
            joins = []
            while self.is_op(",") or self.is_kw("JOIN", "INNER"):
                joins.append(self.join_clause())
            where = group_by = having = None
            if self.is_kw("WHERE"):
                self.advance()
                where = self.expr()
            group_by = ()
            if self.is_kw("GROUP"):
                self.advance()
                self.expect_kw("BY")
                keys = [self.expr()]
                while self.is_op(","):
                    self.advance()
                    keys.append(self.expr())
                group_by = tuple(keys)
            if self.is_kw("HAVING"):
                if anonymized:
                    self.error("HAVING is not allowed in anonymized queries; thresholding is implicit")
                self.advance()
                having = self.expr()
        finally:
            self.anonymized.pop()
        return Query(tuple(items), source, tuple(joins), where, group_by, having, anonymized)

    def select_item(self) -> SelectItem:
        expr = self.expr()
        alias = None
        if self.is_kw("AS"):
            self.advance()
            alias = self.ident()
        elif self.tok.kind == "IDENT":
            alias = self.ident()
        return SelectItem(expr, alias)

    def from_item(self):
        if self.is_op("("):
            self.advance()
            sub = self.query()
            self.expect_op(")")
            alias = self.opt_alias()
            return SubqueryRef(sub, alias, self.opt_sample())
        name = self.ident()
        alias = self.opt_alias()
        return TableRef(name, alias, self.opt_sample())

    def opt_alias(self) -> str | None:
        if self.is_kw("AS"):
            self.advance()
            return self.ident()
        if self.tok.kind == "IDENT":
            return self.ident()
        return None

    def opt_sample(self) -> ReservoirSample | None:
        if not self.is_kw("TABLESAMPLE"):
            return None
        if not self.debug:
            self.error("TABLESAMPLE is only accepted in debug mode")
        self.advance()
        self.expect_soft("RESERVOIR")
        self.expect_op("(")
        if self.tok.kind != "INT":
            self.error("expected a row count", "integer")
        rows = self.advance().value
        self.expect_soft("ROWS")
        self.expect_soft("PARTITION")
        self.expect_kw("BY")
        col = self.ident()
        self.expect_op(")")
        return ReservoirSample(rows, col)

    def join_clause(self) -> JoinClause:
        comma = self.is_op(",")
        if comma:
            self.advance()
        else:
            if self.is_kw("INNER"):
                self.advance()
            self.expect_kw("JOIN")
        item = self.from_item()
        using = on = None
        if self.is_kw("USING"):
            self.advance()
            self.expect_op("(")
            cols = [self.ident()]
            while self.is_op(","):
                self.advance()
                cols.append(self.ident())
            self.expect_op(")")
            using = tuple(cols)
        elif self.is_kw("ON"):
            self.advance()
            on = self.expr()
        return JoinClause(item, comma, using, on)

    # expressions, lowest precedence first

    def expr(self):
        left = self.and_expr()
        while self.is_kw("OR"):
            self.advance()
            left = Binary("OR", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.is_kw("AND"):
            self.advance()
            left = Binary("AND", left, self.not_expr())
        return left

    def not_expr(self):
        if self.is_kw("NOT"):
            self.advance()
            return Unary("NOT", self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        while True:
            if self.is_op(*_COMPARE):
                op = self.advance().value
                left = Binary(op, left, self.additive())
            elif self.is_kw("IS"):
                self.advance()
                negated = False
                if self.is_kw("NOT"):
                    self.advance()
                    negated = True
                self.expect_kw("NULL")
                left = IsNull(left, negated)
            else:
                return left

    def additive(self):
        left = self.multiplicative()
        while self.is_op("+", "-"):
            op = self.advance().value
            left = Binary(op, left, self.multiplicative())
        return left

    def multiplicative(self):
        left = self.unary()
        while self.is_op("*", "/", "%"):
            op = self.advance().value
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        if self.is_op("-"):
            self.advance()
            if self.tok.kind in ("INT", "FLOAT"):
                return Literal(-self.advance().value)
            return Unary("-", self.unary())
        if self.is_op("+"):
            self.advance()
            return self.unary()
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind in ("INT", "FLOAT", "STRING"):
            self.advance()
            return Literal(t.value)
        if self.is_kw("NULL"):
            self.advance()
            return Literal(None)
        if self.is_kw("TRUE", "FALSE"):
            self.advance()
            return Literal(t.value == "TRUE")
        if self.is_op("("):
            self.advance()
            inner = self.expr()
            self.expect_op(")")
            return inner
        if self.is_kw("CASE"):
            return self.case_expr()
        if self.is_kw("IF"):
            return self.if_expr()
        if t.kind == "IDENT":
            name = self.advance().value
            if self.is_op("("):
                return self.call(name, t.offset)
            if self.is_op("."):
                self.advance()
                return ColumnRef(self.ident(), name)
            return ColumnRef(name)
        self.error("expected an expression", "literal", "identifier", "(")

    def case_expr(self):
        self.expect_kw("CASE")
        whens = []
        while self.is_kw("WHEN"):
            self.advance()
            cond = self.expr()
            self.expect_kw("THEN")
            whens.append((cond, self.expr()))
        if not whens:
            self.error("CASE needs at least one WHEN", "WHEN")
        default = None
        if self.is_kw("ELSE"):
            self.advance()
            default = self.expr()
        self.expect_kw("END")
        return Case(tuple(whens), default)

    def if_expr(self):
        self.expect_kw("IF")
        if self.is_op("("):
            self.advance()
            args = [self.expr()]
            while self.is_op(","):
                self.advance()
                args.append(self.expr())
            self.expect_op(")")
            if len(args) != 3:
                raise ParseError("IF takes exactly three arguments", self.tok.offset)
            return Func("IF", tuple(args))
        cond = self.expr()
        self.expect_kw("THEN")
        then = self.expr()
        self.expect_kw("ELSE")
        return Func("IF", (cond, then, self.expr()))

    def call(self, name: str, offset: int):
        upper = name.upper()
        self.expect_op("(")
        if upper.startswith("ANON_"):
            return self.anon_call(upper, offset)
        if upper not in AGGREGATE_FUNCS | SCALAR_FUNCS:
            raise ParseError(f"unknown function {name}", offset)
        distinct = False
        if self.is_kw("DISTINCT"):
            if upper not in AGGREGATE_FUNCS:
                self.error(f"DISTINCT is not valid in {upper}")
            self.advance()
            distinct = True
        args = []
        if self.is_op("*"):
            if upper != "COUNT":
                self.error(f"* is only valid in COUNT, not {upper}")
            self.advance()
            args.append(Star())
        elif not self.is_op(")"):
            args.append(self.expr())
            while self.is_op(","):
                self.advance()
                args.append(self.expr())
        self.expect_op(")")
        return Func(upper, tuple(args), distinct)

    def anon_call(self, upper: str, offset: int):
        if not self.anonymized[-1]:
            raise ParseError(f"{upper} requires SELECT WITH ANONYMIZATION", offset)
        kind = upper[len("ANON_"):]
        if kind not in AggKind.__members__:
            raise ParseError(f"unknown anonymized aggregate {upper}", offset)
        if self.is_op("*"):
            self.advance()
            arg = Star()
        else:
            arg = self.expr()
        params = []
        while self.is_op(","):
            self.advance()
            params.append(self.signed_number())
        self.expect_op(")")
        return AnonCall(kind, arg, tuple(params))

    def signed_number(self) -> float:
        sign = 1
        if self.is_op("-", "+"):
            sign = -1 if self.advance().value == "-" else 1
        if self.tok.kind not in ("INT", "FLOAT"):
            self.error("anonymized aggregate parameters must be numeric literals", "number")
        return sign * self.advance().value


def parse(source, *, debug: bool = False) -> Query:
    """Parse SQL text (or a token list) into a :class:`Query`.

    ``debug`` admits the ``TABLESAMPLE RESERVOIR`` clause, which is otherwise
    applied only by the planner.
    """
    tokens = tokenize(source) if isinstance(source, str) else list(source)
    return _Parser(tokens, debug).statement()

