from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LISTING4, LISTING5
from dpquery.errors import LexError, NameResolutionError, OwnershipError, ParseError, UnsupportedQueryError
from dpquery.expr import AnonCall, Binary, Case, ColumnRef, Func, IsNull, Literal, Star, Unary
from dpquery.plan import AnonAggregate, Join
from dpquery.sql import lower, parse, render_query, tokenize
from dpquery.sql.lexer import KEYWORDS
from dpquery.sql.ast import Query, SelectItem, TableRef

# Paper listings with the symbolic parameters replaced by numbers.
LISTING1 = "SELECT browser_agent, COUNT(*) AS visits\nFROM access_logs\nGROUP BY browser_agent;"
LISTING2 = (
    "SELECT browser_agent,\n       COUNT(DISTINCT uid) + Laplace(1/0.5)\n"
    "FROM access_logs\nGROUP BY browser_agent;"
)
LISTING3 = (
    "SELECT browser_agent,\n       COUNT(DISTINCT uid) + Laplace(1/0.5) AS c\n"
    "FROM access_logs\nGROUP BY browser_agent\nHAVING c >= 10;"
)
LISTING_RESERVOIR = (
    "SELECT browser_agent,\n       COUNT(DISTINCT uid) + Laplace(3/0.5) AS c\n"
    "FROM (SELECT browser_agent, uid\n      FROM access_logs\n      GROUP BY browser_agent, uid)\n"
    "TABLESAMPLE RESERVOIR\n  (3 ROWS PARTITION BY uid)\nGROUP BY browser_agent\n--"
)


def kinds(text):
    return [(t.kind, t.value) for t in tokenize(text)]


def test_lexer_basics():
    assert kinds("SELECT 1") == [("KEYWORD", "SELECT"), ("INT", 1), ("EOF", None)]
    assert kinds("ANON_SUM(x, 0, 5)")[:3] == [("IDENT", "ANON_SUM"), ("OP", "("), ("IDENT", "x")]
    assert kinds("a != 2.5e1 -- tail") [1:3] == [("OP", "<>"), ("FLOAT", 25.0)]
    assert kinds("'it''s' \"Order\"")[:2] == [("STRING", "it's"), ("IDENT", "Order")]


def test_lexer_errors_carry_offsets():
    with pytest.raises(LexError) as exc:
        tokenize("SELECT 'unterminated")
    assert exc.value.offset == 7
    with pytest.raises(LexError) as exc:
        tokenize("SELECT a # b")
    assert exc.value.offset == 9


def test_listing4_ast():
    q = parse(LISTING4)
    assert q.anonymized
    assert q.joins[0].using == ("uid",) and q.joins[0].comma
    assert q.group_by == (ColumnRef("cohort", "T1"),)
    assert q.items[1].expr == AnonCall("SUM", ColumnRef("val", "T2"), (0, 1))


def test_listing1_ast():
    q = parse(LISTING1)
    assert not q.anonymized
    assert q.items[1] == SelectItem(Func("COUNT", (Star(),)), "visits")


def test_all_listings_parse():
    for text in (LISTING1, LISTING2, LISTING3, LISTING4, LISTING5):
        parse(text)
    q = parse(LISTING_RESERVOIR, debug=True)
    assert q.source.sample.rows == 3 and q.source.sample.partition_by == "uid"
    with pytest.raises(ParseError):
        parse(LISTING_RESERVOIR)


def test_anon_calls_need_anonymization():
    with pytest.raises(ParseError):
        parse("SELECT ANON_SUM(x) FROM t")
    with pytest.raises(ParseError):
        parse("SELECT WITH ANONYMIZATION a FROM (SELECT ANON_SUM(x) FROM t) GROUP BY a")


def test_parse_errors_report_expected_tokens():
    with pytest.raises(ParseError) as exc:
        parse("SELECT a FROM")
    assert "identifier" in exc.value.expected
    with pytest.raises(ParseError):
        parse("SELECT WITH ANONYMIZATION a, ANON_COUNT(*) FROM t GROUP BY a HAVING a > 1")
    with pytest.raises(ParseError):
        parse("SELECT FOO(a) FROM t")
    with pytest.raises(ParseError):
        parse("SELECT WITH ANONYMIZATION ANON_SUM(x, y, 1) FROM t")


def test_if_forms_agree():
    a = parse("SELECT IF(x = 1, 0, 2) FROM t").items[0].expr
    b = parse("SELECT IF x = 1 THEN 0 ELSE 2 FROM t").items[0].expr
    assert a == b == Func("IF", (Binary("=", ColumnRef("x"), Literal(1)), Literal(0), Literal(2)))


def test_precedence():
    e = parse("SELECT a OR b AND NOT c = 1 + 2 * 3 FROM t").items[0].expr
    assert e == Binary(
        "OR",
        ColumnRef("a"),
        Binary("AND", ColumnRef("b"), Unary("NOT", Binary("=", ColumnRef("c"), Binary("+", Literal(1), Binary("*", Literal(2), Literal(3)))))),
    )


def test_lower_listing5(fig1):
    node = lower(parse(LISTING5), fig1)
    assert isinstance(node, AnonAggregate)
    assert node.keys == (ColumnRef("dept"),)
    assert isinstance(node.child, Join) and node.child.uid_equi
    assert node.aggs[0].count_rows and node.aggs[0].alias == "c"


def test_lower_listing2_plain(fig1):
    sql = "SELECT dept, COUNT(DISTINCT uid) AS n FROM Employee GROUP BY dept"
    node = lower(parse(sql), fig1)
    assert not isinstance(node, AnonAggregate)


def test_lower_on_uid_equality(fig1):
    sql = (
        "SELECT WITH ANONYMIZATION dept, ANON_COUNT(*) FROM Employee E JOIN Order O "
        "ON E.uid = O.uid AND O.amount > 10 GROUP BY dept"
    )
    node = lower(parse(sql), fig1)
    assert node.child.uid_equi and node.child.condition is not None


def test_lower_errors(fig1):
    with pytest.raises(NameResolutionError):
        lower(parse("SELECT WITH ANONYMIZATION nope, ANON_COUNT(*) FROM Employee GROUP BY nope"), fig1)
    with pytest.raises(NameResolutionError):
        lower(parse("SELECT a FROM Missing"), fig1)
    with pytest.raises(OwnershipError) as exc:
        lower(parse("SELECT WITH ANONYMIZATION dept, ANON_COUNT(*) FROM Employee E, Order O GROUP BY dept"), fig1)
    assert exc.value.operator == "Join"
    with pytest.raises(UnsupportedQueryError):
        lower(parse("SELECT WITH ANONYMIZATION uid, ANON_COUNT(*) FROM Employee GROUP BY uid"), fig1)
    with pytest.raises(UnsupportedQueryError):
        lower(parse("SELECT WITH ANONYMIZATION name, ANON_COUNT(*) FROM Employee GROUP BY dept"), fig1)
    with pytest.raises(UnsupportedQueryError):
        lower(parse("SELECT WITH ANONYMIZATION dept FROM Employee GROUP BY dept"), fig1)
    with pytest.raises(OwnershipError):
        lower(
            parse(
                "SELECT WITH ANONYMIZATION dept, ANON_COUNT(*) "
                "FROM (SELECT dept, COUNT(*) AS n FROM Employee GROUP BY dept) GROUP BY dept"
            ),
            fig1,
        )


# -- parse/render fixpoint --------------------------------------------------------

names = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True).filter(
    lambda s: s.upper() not in KEYWORDS and not s.upper().startswith("ANON_")
)
literals = st.one_of(
    st.integers(-10**6, 10**6),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(max_size=5),
    st.booleans(),
    st.none(),
).map(Literal)
columns = st.builds(ColumnRef, names, st.one_of(st.none(), names))


def extend(children):
    return st.one_of(
        st.builds(Unary, st.sampled_from(["-", "NOT"]), children),
        st.builds(Binary, st.sampled_from(["+", "-", "*", "/", "%", "=", "<>", "<", ">=", "AND", "OR"]), children, children),
        st.builds(IsNull, children, st.booleans()),
        st.builds(Case, st.lists(st.tuples(children, children), min_size=1, max_size=2).map(tuple), st.one_of(st.none(), children)),
        st.builds(lambda a: Func("ABS", (a,)), children),
        st.builds(lambda a, b, c: Func("IF", (a, b, c)), children, children, children),
    )


exprs = st.recursive(st.one_of(literals, columns), extend, max_leaves=12)


@settings(max_examples=300)
@given(st.lists(exprs, min_size=1, max_size=3), names, st.one_of(st.none(), exprs))
def test_parse_render_fixpoint(items, table, where):
    q = Query(tuple(SelectItem(e) for e in items), TableRef(table), where=where)
    once = parse(render_query(q))
    twice = parse(render_query(once))
    assert once == twice
    assert render_query(once) == render_query(twice)


@settings(max_examples=100)
@given(names, names, st.floats(-100, 100), st.floats(0, 100))
def test_anonymized_render_fixpoint(key, col, lo, width):
    sql = f"SELECT WITH ANONYMIZATION {key}, ANON_SUM({col}, {lo!r}, {lo + width!r}) AS s FROM t GROUP BY {key}"
    q = parse(sql)
    assert parse(render_query(q)) == q
