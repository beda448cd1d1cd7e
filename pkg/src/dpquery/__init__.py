"""Differentially private SQL over user-owned tables.

Typical use::

    from dpquery import QueryConfig, load_catalog, run_query

    catalog = load_catalog("data/")
    table = run_query(sql, catalog, QueryConfig(epsilon=1.0, delta=1e-6), seed=7)
"""

from .aggregates import AggKind, AggregatorSpec, AggregatorState, NoisyResult
from .engine import QueryConfig, explain, plan_query, run_plain, run_query
from .errors import DPQueryError, OwnershipError, PrivacyParameterError, QueryError
from .io import ingest_csv, load_catalog
from .noise import ClampBounds, NoiselessSource, PrivacyBudget, RandomSource
from .planner import ResultTable, compute_tau, execute, rewrite, split_budget
from .relational import Column, Relation

__version__ = "0.1.0"

__all__ = [
    "AggKind",
    "AggregatorSpec",
    "AggregatorState",
    "NoisyResult",
    "QueryConfig",
    "explain",
    "plan_query",
    "run_plain",
    "run_query",
    "DPQueryError",
    "OwnershipError",
    "PrivacyParameterError",
    "QueryError",
    "ingest_csv",
    "load_catalog",
    "ClampBounds",
    "NoiselessSource",
    "PrivacyBudget",
    "RandomSource",
    "ResultTable",
    "compute_tau",
    "execute",
    "rewrite",
    "split_budget",
    "Column",
    "Relation",
]
