"""Stochastic differential-privacy tester for aggregation primitives."""

from .halton import first_primes, halton, halton_points
from .primitives import PRIMITIVES, Primitive, get_primitive
from .tester import (
    PairResult,
    TesterConfig,
    Verdict,
    Witness,
    corpus,
    dp_predicate_test,
    gen_databases,
    run,
    run_named,
    successors,
)

__all__ = [
    "halton",
    "halton_points",
    "first_primes",
    "Primitive",
    "PRIMITIVES",
    "get_primitive",
    "TesterConfig",
    "PairResult",
    "Witness",
    "Verdict",
    "gen_databases",
    "corpus",
    "successors",
    "dp_predicate_test",
    "run",
    "run_named",
]
