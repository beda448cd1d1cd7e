"""One-call entry points: SQL text in, released table out."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .aggregates import ApproxBoundsConfig
from .errors import UnsupportedQueryError
from .noise import NoiselessSource, PrivacyBudget, RandomSource
from .plan import AnonAggregate, evaluate
from .planner import (
    ExecutionOptions,
    ResultTable,
    RewrittenPlan,
    count_users,
    default_delta,
    dump_plan,
    execute,
    rewrite,
)
from .relational import Relation
from .sql import lower, parse

__all__ = ["QueryConfig", "plan_query", "run_query", "explain", "run_plain"]


@dataclass(frozen=True)
class QueryConfig:
    epsilon: float = 1.0
    delta: float | None = None  # None: derive from the number of users
    cu: int = 1
    leftovers: bool = False
    ci_level: float = 0.95
    snap: bool = True
    tau: float | None = None  # test hook: overrides the computed threshold
    noiseless: bool = False  # test hook: zero noise everywhere
    bounds: ApproxBoundsConfig = ApproxBoundsConfig()


def plan_query(sql: str, catalog: Mapping[str, Relation], config: QueryConfig) -> RewrittenPlan:
    node = lower(parse(sql), catalog)
    if not isinstance(node, AnonAggregate):
        raise UnsupportedQueryError("only SELECT WITH ANONYMIZATION queries can be released")
    delta = config.delta
    if delta is None:
        delta = default_delta(count_users(node.child, catalog), config.epsilon)
    budget = PrivacyBudget(config.epsilon, delta, config.cu)
    return rewrite(node, budget, leftovers=config.leftovers, tau=config.tau, bounds_config=config.bounds)


def run_query(
    sql: str,
    catalog: Mapping[str, Relation],
    config: QueryConfig = QueryConfig(),
    seed: int | None = None,
) -> ResultTable:
    plan = plan_query(sql, catalog, config)
    rng = NoiselessSource(seed) if config.noiseless else RandomSource(seed)
    return execute(plan, catalog, rng, ExecutionOptions(config.ci_level, config.snap))


def explain(sql: str, catalog: Mapping[str, Relation], config: QueryConfig = QueryConfig()) -> str:
    return dump_plan(plan_query(sql, catalog, config))


def run_plain(sql: str, catalog: Mapping[str, Relation], seed: int | None = None) -> Relation:
    """Evaluate a non-anonymized query exactly. For debugging only: nothing is protected."""
    node = lower(parse(sql, debug=True), catalog)
    if isinstance(node, AnonAggregate):
        raise UnsupportedQueryError("use run_query for anonymized queries")
    return evaluate(node, catalog, RandomSource(seed))
