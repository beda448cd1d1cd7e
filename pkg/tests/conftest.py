from __future__ import annotations

from pathlib import Path

import pytest

from dpquery import load_catalog

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"

LISTING4 = (
    "SELECT WITH ANONYMIZATION\n"
    "  T1.cohort, ANON_SUM(T2.val, 0, 1)\n"
    "FROM Table1 T1, Table2 T2 USING(uid)\n"
    "GROUP BY T1.cohort;"
)
LISTING5 = (
    "SELECT WITH ANONYMIZATION\n"
    "  dept, ANON_COUNT(*, 0, 5) as c\n"
    "FROM Employee E, Order O USING(uid)\n"
    "GROUP BY dept;"
)


@pytest.fixture
def fig1():
    return load_catalog(DATA / "fig1")


@pytest.fixture
def cohorts():
    return load_catalog(DATA / "listing4")
