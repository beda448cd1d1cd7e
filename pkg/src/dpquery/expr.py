"""Scalar expression trees: type inference, compilation to row closures, rendering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence, Union

from .errors import EvalError, NameResolutionError, TypeMismatchError, UnsupportedQueryError

diagnostics = logging.getLogger("dpquery.diagnostics")

NUMERIC = ("int", "float")


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class ColumnRef:
    name: str
    table: str | None = None


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class IsNull:
    operand: "Expr"
    negated: bool = False


@dataclass(frozen=True)
class Case:
    whens: tuple[tuple["Expr", "Expr"], ...]
    default: "Expr | None" = None


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple["Expr", ...] = ()
    distinct: bool = False


@dataclass(frozen=True)
class AnonCall:
    """``ANON_<kind>(arg [, literal ...])`` as written in a select list."""

    kind: str
    arg: "Expr"
    params: tuple[float, ...] = ()


Expr = Union[Literal, ColumnRef, Star, Unary, Binary, IsNull, Case, Func, AnonCall]

AGGREGATE_FUNCS = {"COUNT", "SUM", "AVG", "VAR", "STDDEV", "MIN", "MAX", "QUANTILE"}
SCALAR_FUNCS = {"ABS", "SQRT", "LN", "EXP", "ROUND", "COALESCE", "LAPLACE", "IF"}
ARITH_OPS = {"+", "-", "*", "/", "%"}
COMPARE_OPS = {"=", "<>", "<", "<=", ">", ">="}
LOGIC_OPS = {"AND", "OR"}


class ColumnLike:
    """Protocol stand-in: anything with ``name``, ``type`` and ``qualifiers``."""

    name: str
    type: str
    qualifiers: frozenset


def resolve(columns: Sequence[ColumnLike], ref: ColumnRef) -> int:
    hits = [
        i
        for i, c in enumerate(columns)
        if c.name.lower() == ref.name.lower()
        and (ref.table is None or ref.table.lower() in {q.lower() for q in c.qualifiers})
    ]
    label = ref.name if ref.table is None else f"{ref.table}.{ref.name}"
    if not hits:
        raise NameResolutionError(f"unknown column {label}")
    if len(hits) > 1:
        raise NameResolutionError(f"ambiguous column {label}")
    return hits[0]


def walk(expr):
    yield expr
    if isinstance(expr, Unary):
        yield from walk(expr.operand)
    elif isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, IsNull):
        yield from walk(expr.operand)
    elif isinstance(expr, Case):
        for cond, val in expr.whens:
            yield from walk(cond)
            yield from walk(val)
        if expr.default is not None:
            yield from walk(expr.default)
    elif isinstance(expr, Func):
        for a in expr.args:
            yield from walk(a)
    elif isinstance(expr, AnonCall):
        yield from walk(expr.arg)


def contains_aggregate(expr) -> bool:
    return any(
        isinstance(e, AnonCall) or (isinstance(e, Func) and e.name in AGGREGATE_FUNCS) for e in walk(expr)
    )


def literal_type(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    return "text"


def _unify(a: str, b: str, what: str) -> str:
    if a == "null":
        return b
    if b == "null" or a == b:
        return a
    if a in NUMERIC and b in NUMERIC:
        return "float"
    raise TypeMismatchError(f"{what}: incompatible types {a} and {b}")


def infer_type(expr, columns: Sequence[ColumnLike]) -> str:
    """Static type of ``expr``; raises TypeMismatchError on ill-typed trees."""
    if isinstance(expr, Literal):
        return literal_type(expr.value)
    if isinstance(expr, ColumnRef):
        return columns[resolve(columns, expr)].type
    if isinstance(expr, Unary):
        t = infer_type(expr.operand, columns)
        if expr.op == "NOT":
            if t not in ("bool", "null"):
                raise TypeMismatchError(f"NOT applied to {t}")
            return "bool"
        if t not in NUMERIC + ("null",):
            raise TypeMismatchError(f"unary {expr.op} applied to {t}")
        return t
    if isinstance(expr, Binary):
        lt, rt = infer_type(expr.left, columns), infer_type(expr.right, columns)
        if expr.op in LOGIC_OPS:
            for t in (lt, rt):
                if t not in ("bool", "null"):
                    raise TypeMismatchError(f"{expr.op} applied to {t}")
            return "bool"
        if expr.op in COMPARE_OPS:
            _unify(lt, rt, f"comparison {expr.op}")
            return "bool"
        for t in (lt, rt):
            if t not in NUMERIC + ("null",):
                raise TypeMismatchError(f"arithmetic {expr.op} applied to {t}")
        if expr.op == "/":
            return "float"
        return _unify(lt, rt, expr.op)
    if isinstance(expr, IsNull):
        infer_type(expr.operand, columns)
        return "bool"
    if isinstance(expr, Case):
        out = "null"
        for cond, val in expr.whens:
            if infer_type(cond, columns) not in ("bool", "null"):
                raise TypeMismatchError("CASE condition must be boolean")
            out = _unify(out, infer_type(val, columns), "CASE branches")
        if expr.default is not None:
            out = _unify(out, infer_type(expr.default, columns), "CASE branches")
        return out
    if isinstance(expr, Func):
        return _func_type(expr, columns)
    if isinstance(expr, AnonCall):
        return "float"
    raise UnsupportedQueryError(f"cannot type {expr!r}")


def _func_type(expr: Func, columns) -> str:
    name = expr.name
    if name == "COUNT":
        if expr.args and not isinstance(expr.args[0], Star):
            infer_type(expr.args[0], columns)
        return "int"
    arg_types = [infer_type(a, columns) for a in expr.args if not isinstance(a, Star)]
    if name in ("MIN", "MAX"):
        return arg_types[0] if arg_types else "null"
    if name == "COALESCE":
        out = "null"
        for t in arg_types:
            out = _unify(out, t, "COALESCE")
        return out
    if name == "IF":
        if len(arg_types) != 3 or arg_types[0] not in ("bool", "null"):
            raise TypeMismatchError("IF expects (condition, then, else)")
        return _unify(arg_types[1], arg_types[2], "IF branches")
    for t in arg_types:
        if t not in NUMERIC + ("null",):
            raise TypeMismatchError(f"{name} applied to {t}")
    if name in ("SUM",) and arg_types and arg_types[0] == "int":
        return "int"
    if name == "ABS" and arg_types:
        return arg_types[0]
    return "float"


# -- evaluation ---------------------------------------------------------------


def _divide(a, b):
    if b == 0:
        # IEEE semantics: 0/0 is NaN, x/0 is a signed infinity.
        if a == 0 or a != a:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _arith(op, a, b):
    if a is None or b is None:
        return None
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return _divide(float(a), float(b))
    try:
        return math.fmod(a, b) if isinstance(a, float) or isinstance(b, float) else a % b
    except (ZeroDivisionError, ValueError) as exc:
        raise EvalError(f"modulo fault: {exc}") from exc


def _compare(op, a, b):
    if a is None or b is None:
        return None
    if op == "=":
        return a == b
    if op == "<>":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _scalar(name: str, args: list, rng):
    if name == "COALESCE":
        return next((a for a in args if a is not None), None)
    if name == "IF":
        return args[1] if args[0] is True else args[2]
    if any(a is None for a in args):
        return None
    try:
        if name == "ABS":
            return abs(args[0])
        if name == "SQRT":
            return math.sqrt(args[0])
        if name == "LN":
            return math.log(args[0])
        if name == "EXP":
            return math.exp(args[0])
        if name == "ROUND":
            return float(round(args[0], int(args[1]) if len(args) > 1 else 0))
    except (ValueError, OverflowError) as exc:
        raise EvalError(f"{name} fault: {exc}") from exc
    if name == "LAPLACE":
        if rng is None:
            raise EvalError("LAPLACE() needs a random source")
        return float(rng.laplace(float(args[0])))
    raise UnsupportedQueryError(f"unknown function {name}")


def compile_expr(expr, columns: Sequence[ColumnLike], rng=None) -> Callable[[tuple], Any]:
    """Turn ``expr`` into a closure over a row tuple laid out like ``columns``."""
    if isinstance(expr, Literal):
        value = expr.value
        return lambda row: value
    if isinstance(expr, ColumnRef):
        idx = resolve(columns, expr)
        return lambda row: row[idx]
    if isinstance(expr, Unary):
        inner = compile_expr(expr.operand, columns, rng)
        if expr.op == "NOT":
            return lambda row: (lambda v: None if v is None else not v)(inner(row))
        return lambda row: (lambda v: None if v is None else -v)(inner(row))
    if isinstance(expr, Binary):
        left, right = compile_expr(expr.left, columns, rng), compile_expr(expr.right, columns, rng)
        op = expr.op
        if op == "AND":
            def _and(row):
                a = left(row)
                if a is False:
                    return False
                b = right(row)
                if b is False:
                    return False
                return None if a is None or b is None else True
            return _and
        if op == "OR":
            def _or(row):
                a = left(row)
                if a is True:
                    return True
                b = right(row)
                if b is True:
                    return True
                return None if a is None or b is None else False
            return _or
        if op in COMPARE_OPS:
            return lambda row: _compare(op, left(row), right(row))
        return lambda row: _arith(op, left(row), right(row))
    if isinstance(expr, IsNull):
        inner = compile_expr(expr.operand, columns, rng)
        neg = expr.negated
        return lambda row: (inner(row) is None) != neg
    if isinstance(expr, Case):
        branches = [(compile_expr(c, columns, rng), compile_expr(v, columns, rng)) for c, v in expr.whens]
        default = compile_expr(expr.default, columns, rng) if expr.default is not None else (lambda row: None)

        def _case(row):
            for cond, val in branches:
                if cond(row) is True:
                    return val(row)
            return default(row)
        return _case
    if isinstance(expr, Func):
        if expr.name in AGGREGATE_FUNCS:
            raise UnsupportedQueryError(f"aggregate {expr.name} used outside GROUP BY context")
        if expr.name == "IF":
            cond, then, other = (compile_expr(a, columns, rng) for a in expr.args)
            return lambda row: then(row) if cond(row) is True else other(row)
        args = [compile_expr(a, columns, rng) for a in expr.args]
        name = expr.name
        return lambda row: _scalar(name, [a(row) for a in args], rng)
    raise UnsupportedQueryError(f"cannot evaluate {render_expr(expr)} here")


def guarded(fn: Callable[[tuple], Any], fallback, context: str) -> Callable[[tuple], Any]:
    """Wrap ``fn`` so row-level faults become ``fallback`` instead of propagating.

    A fault that surfaced to the analyst would reveal that some row satisfied
    an attacker-chosen condition, so faults are swallowed and only logged.
    """

    def _safe(row):
        try:
            return fn(row)
        except (EvalError, TypeError, ArithmeticError, ValueError) as exc:
            diagnostics.warning("suppressed fault in %s: %s", context, exc)
            return fallback
    return _safe


# -- rendering ----------------------------------------------------------------


def _render_literal(value) -> str:
    if value is None:
        return "NULL"
    if value is True:
        return "TRUE"
    if value is False:
        return "FALSE"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise UnsupportedQueryError("non-finite literal cannot be rendered")
        return repr(value)
    return str(value)


def _render_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def render_expr(expr) -> str:
    """Fully parenthesized SQL text for ``expr``."""
    if isinstance(expr, Literal):
        return _render_literal(expr.value)
    if isinstance(expr, ColumnRef):
        return expr.name if expr.table is None else f"{expr.table}.{expr.name}"
    if isinstance(expr, Star):
        return "*"
    if isinstance(expr, Unary):
        # always spaced so "- -5" never lexes as a comment or a single token
        return f"({expr.op} {render_expr(expr.operand)})"
    if isinstance(expr, Binary):
        return f"({render_expr(expr.left)} {expr.op} {render_expr(expr.right)})"
    if isinstance(expr, IsNull):
        return f"({render_expr(expr.operand)} IS {'NOT ' if expr.negated else ''}NULL)"
    if isinstance(expr, Case):
        parts = ["CASE"]
        for c, v in expr.whens:
            parts.append(f"WHEN {render_expr(c)} THEN {render_expr(v)}")
        if expr.default is not None:
            parts.append(f"ELSE {render_expr(expr.default)}")
        parts.append("END")
        return " ".join(parts)
    if isinstance(expr, Func):
        inner = ", ".join(render_expr(a) for a in expr.args)
        return f"{expr.name}({'DISTINCT ' if expr.distinct else ''}{inner})"
    if isinstance(expr, AnonCall):
        args = [render_expr(expr.arg)] + [_render_number(p) for p in expr.params]
        return f"ANON_{expr.kind}({', '.join(args)})"
    raise TypeError(f"not an expression: {expr!r}")
