"""Empirical check of the DP inequality on adjacent databases.

Root databases come from Halton points. From each root, a depth-first walk
removes one record at a time; every (database, database minus one record)
edge is tested by comparing histograms of the primitive's outputs on both
sides.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from ..errors import PrivacyParameterError
from ..noise import ClampBounds, RandomSource
from .halton import first_primes, halton
from .primitives import Primitive, get_primitive

__all__ = [
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


@dataclass(frozen=True)
class TesterConfig:
    __test__ = False  # not a pytest class

    num_databases: int = 16  # roots, spread evenly over db_sizes
    db_sizes: tuple[int, ...] = (1, 2, 3, 4)
    value_range: float = 0.5
    samples: int = 50_000
    buckets: int = 50
    epsilon: float = 1.0
    delta: float = 0.0
    alpha: float = 0.02
    ci_level: float = 0.999
    snap: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1000:
            raise PrivacyParameterError("samples must be >= 1000")
        if self.buckets < 2:
            raise PrivacyParameterError("buckets must be >= 2")
        if not 0 <= self.alpha < 1:
            raise PrivacyParameterError("alpha must lie in [0, 1)")
        if not 0 < self.ci_level < 1:
            raise PrivacyParameterError("ci_level must lie in (0, 1)")
        if not self.epsilon > 0 or not 0 <= self.delta < 1:
            raise PrivacyParameterError("invalid epsilon or delta")
        if not self.db_sizes or min(self.db_sizes) < 1:
            raise PrivacyParameterError("database sizes must be >= 1")

    @property
    def bounds(self) -> ClampBounds:
        return ClampBounds(-self.value_range, self.value_range)


def gen_databases(count: int, size: int, value_range: float = 0.5, start: int = 1) -> list[tuple[float, ...]]:
    """Databases of ``size`` records; record ``j`` of database ``k`` is Halton coordinate ``j`` scaled to ``[-r, r]``."""
    bases = first_primes(size)
    return [
        tuple(-value_range + 2 * value_range * halton(k, b) for b in bases) for k in range(start, start + count)
    ]


def corpus(cfg: TesterConfig) -> list[tuple[float, ...]]:
    per_size = max(1, cfg.num_databases // len(cfg.db_sizes))
    out = []
    for s in cfg.db_sizes:
        out.extend(gen_databases(per_size, s, cfg.value_range))
    return out


def successors(db: tuple) -> list[tuple]:
    """Databases with one record removed. The empty database is never produced."""
    if len(db) < 2:
        return []
    return [db[:i] + db[i + 1 :] for i in range(len(db))]


@dataclass(frozen=True)
class PairResult:
    passed: bool
    violations_ab: tuple[int, ...]
    violations_ba: tuple[int, ...]
    edges: tuple[float, ...]
    density_a: tuple[float, ...]
    density_b: tuple[float, ...]
    ratios: tuple[float, ...]


def _wilson(counts: np.ndarray, n: int, level: float):
    lo, hi = proportion_confint(counts, n, alpha=1 - level, method="wilson")
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def dp_predicate_test(samples_a: np.ndarray, samples_b: np.ndarray, cfg: TesterConfig) -> PairResult:
    """Bucketed check of ``P[A in B_k] <= e^eps P[B in B_k] + delta`` in both directions.

    A bucket violates only when the Wilson lower bound of one side exceeds
    ``e^eps`` times the Wilson upper bound of the other plus ``delta``. The
    pair fails if either direction has more than ``alpha * K`` violations.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    k = cfg.buckets if hi > lo else 1
    edges = np.linspace(lo, hi, k + 1) if hi > lo else np.array([lo, hi])
    if k == 1:
        ca, cb = np.array([a.size]), np.array([b.size])
    else:
        ca = np.histogram(a, edges)[0]
        cb = np.histogram(b, edges)[0]
    la, ua = _wilson(ca, a.size, cfg.ci_level)
    lb, ub = _wilson(cb, b.size, cfg.ci_level)
    factor = math.exp(cfg.epsilon)
    ab = np.flatnonzero(la > factor * ub + cfg.delta)
    ba = np.flatnonzero(lb > factor * ua + cfg.delta)
    pa, pb = ca / a.size, cb / b.size
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(pb > 0, pa / pb, np.inf)
    limit = cfg.alpha * k
    passed = len(ab) <= limit and len(ba) <= limit
    return PairResult(
        passed,
        tuple(int(i) for i in ab),
        tuple(int(i) for i in ba),
        tuple(float(e) for e in edges),
        tuple(float(x) for x in pa),
        tuple(float(x) for x in pb),
        tuple(float(x) for x in ratios),
    )


@dataclass(frozen=True)
class Witness:
    d1: tuple[float, ...]
    d2: tuple[float, ...]
    failing_buckets_d1_over_d2: tuple[int, ...]
    failing_buckets_d2_over_d1: tuple[int, ...]
    bucket_edges: tuple[float, ...]
    density_d1: tuple[float, ...]
    density_d2: tuple[float, ...]
    ratios: tuple[float, ...]


@dataclass
class Verdict:
    primitive: str
    passed: bool
    witness: Witness | None = None
    pairs_tested: int = 0
    databases_sampled: int = 0
    config: TesterConfig = field(default_factory=TesterConfig)

    def report(self) -> dict:
        """Machine-readable summary, including the witness when the test failed."""
        out = {
            "primitive": self.primitive,
            "passed": self.passed,
            "pairs_tested": self.pairs_tested,
            "databases_sampled": self.databases_sampled,
            "config": asdict(self.config),
        }
        if self.witness is not None:
            out["witness"] = asdict(self.witness)
        return out


def run(f: Primitive, cfg: TesterConfig, rng: RandomSource | None = None, roots=None) -> Verdict:
    """Depth-first search over remove-one-record edges; stops at the first failing pair."""
    rng = rng or RandomSource(cfg.seed)
    cache: dict[tuple, np.ndarray] = {}

    def samples(db):
        if db not in cache:
            cache[db] = f.sample(db, rng.child(f"db:{db!r}"), cfg.samples)
        return cache[db]

    verdict = Verdict(f.name, True, config=cfg)
    visited: set[tuple] = set()
    for root in corpus(cfg) if roots is None else roots:
        stack = [tuple(root)]
        while stack:
            db = stack.pop()
            if db in visited:
                continue
            visited.add(db)
            for nxt in successors(db):
                assert len(db) - len(nxt) == 1
                verdict.pairs_tested += 1
                res = dp_predicate_test(samples(db), samples(nxt), cfg)
                if not res.passed:
                    verdict.passed = False
                    verdict.witness = Witness(
                        db, nxt, res.violations_ab, res.violations_ba, res.edges, res.density_a, res.density_b, res.ratios
                    )
                    verdict.databases_sampled = len(cache)
                    return verdict
                stack.append(nxt)
    verdict.databases_sampled = len(cache)
    return verdict


def run_named(name: str, cfg: TesterConfig, rng: RandomSource | None = None) -> Verdict:
    return run(get_primitive(name, cfg.epsilon, cfg.bounds, cfg.snap), cfg, rng)
