"""Expansion of the anonymized aggregate into per-user and cross-user stages.

The per-user stage groups the table subquery by ``(uid, keys)`` with plain
partial aggregates and keeps at most ``cu`` of those rows per user. The
cross-user stage groups by ``keys``, releases the DP aggregates and a noisy
distinct-user count, and drops groups whose noisy count falls below ``tau``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .aggregates import (
    AggKind,
    AggregatorSpec,
    AggregatorState,
    ApproxBoundsConfig,
    approx_bounds,
    result,
)
from .errors import (
    BoundsInferenceError,
    DPQueryError,
    OwnershipError,
    PrivacyParameterError,
    UnsupportedQueryError,
)
from .expr import AnonCall, ColumnRef, Star, render_expr, resolve
from .noise import ClampBounds, PrivacyBudget, RandomSource, sample_laplace
from .plan import (
    AnonAggregate,
    GroupAggregate,
    Project,
    Reservoir,
    Scan,
    evaluate,
    render_plan,
    validate_ownership,
)
from .relational import PlainAgg, Relation, group_aggregate, project, reservoir_per_user, sort_key

__all__ = [
    "AnonAgg",
    "AnonQuery",
    "EpsilonShares",
    "RewrittenPlan",
    "ResultRow",
    "ResultTable",
    "ExecutionOptions",
    "compute_tau",
    "release_probability",
    "any_release_probability",
    "split_budget",
    "default_delta",
    "count_users",
    "anon_agg_from_call",
    "rewrite",
    "run_per_user_stage",
    "execute",
    "dump_plan",
]


# -- threshold and budget arithmetic -------------------------------------------


def compute_tau(eps_threshold: float, delta: float, cu: int = 1) -> float:
    """Smallest threshold making a single user's partitions appear with probability at most ``delta``."""
    PrivacyBudget(eps_threshold, delta, cu)
    if delta == 0:
        raise PrivacyParameterError("delta must be positive for thresholding")
    # 2 - 2(1-delta)^(1/cu), written to keep precision for tiny delta
    arg = -2.0 * math.expm1(math.log1p(-delta) / cu)
    return 1.0 - (cu / eps_threshold) * math.log(arg)


def release_probability(tau: float, eps_threshold: float, cu: int = 1) -> float:
    """Probability that one Laplace(cu/eps) count of a single user reaches ``tau``."""
    if tau < 1:
        raise PrivacyParameterError(f"tau must be >= 1, got {tau}")
    PrivacyBudget(eps_threshold, 0.0, cu)
    return 0.5 * math.exp(-(tau - 1) * eps_threshold / cu)


def any_release_probability(tau: float, eps_threshold: float, cu: int = 1) -> float:
    """Probability that at least one of a single user's ``cu`` partitions is released."""
    rho = release_probability(tau, eps_threshold, cu)
    return -math.expm1(cu * math.log1p(-rho))


@dataclass(frozen=True)
class EpsilonShares:
    aggregates: tuple[float, ...]
    threshold: float

    @property
    def total_per_partition(self) -> float:
        return sum(self.aggregates) + self.threshold


def split_budget(budget: PrivacyBudget, n_aggs: int) -> EpsilonShares:
    """Uniform split: every aggregate and the user count get ``eps / (cu * (n + 1))``."""
    if n_aggs < 1:
        raise UnsupportedQueryError("an anonymized query needs at least one aggregate")
    share = budget.epsilon / (budget.cu * (n_aggs + 1))
    return EpsilonShares((share,) * n_aggs, share)


def default_delta(n_users: int, epsilon: float) -> float:
    """``n ** (-epsilon * ln n)`` for ``n`` distinct users."""
    if n_users < 2:
        raise PrivacyParameterError("the default delta needs at least 2 distinct users; pass delta explicitly")
    delta = math.exp(-epsilon * math.log(n_users) ** 2)
    if delta <= 0:
        raise PrivacyParameterError("default delta underflows to 0; pass delta explicitly")
    return delta


def count_users(plan, catalog: Mapping[str, Relation]) -> int:
    """Distinct uids across every table scanned by ``plan``."""
    uids = set()
    stack = [plan]
    while stack:
        node = stack.pop()
        if isinstance(node, Scan):
            rel = _lookup(catalog, node.table)
            if rel.owned:
                uids.update(r[rel.uid] for r in rel.rows)
        stack.extend(node.children)
    return len(uids)


def _lookup(catalog: Mapping[str, Relation], name: str) -> Relation:
    if name in catalog:
        return catalog[name]
    folded = [k for k in catalog if k.casefold() == name.casefold()]
    if len(folded) == 1:
        return catalog[folded[0]]
    from .errors import NameResolutionError

    raise NameResolutionError(f"unknown table {name}")


# -- the anonymized query ---------------------------------------------------------


@dataclass(frozen=True)
class AnonAgg:
    """One DP aggregate of the select list.

    ``kind`` is the cross-user function. ``count_rows`` marks the
    ``ANON_COUNT(*, L, U)`` form: per-user row counts summed with clamping.
    """

    kind: AggKind
    arg: object = None  # expression, None for *
    bounds: ClampBounds | None = None
    phi: float | None = None
    alias: str = ""
    count_rows: bool = False

    def partial(self, name: str) -> PlainAgg:
        if self.count_rows or self.kind is AggKind.COUNT:
            return PlainAgg("COUNT", self.arg, name)
        if self.kind is AggKind.SUM:
            return PlainAgg("SUM", self.arg, name)
        if self.kind is AggKind.NTILE:
            return PlainAgg("QUANTILE", self.arg, name, param=self.phi)
        # AVG, VAR and STDDEV see one per-user mean each
        return PlainAgg("AVG", self.arg, name)

    def spec(self, bounds: ClampBounds | None) -> AggregatorSpec:
        return AggregatorSpec(self.kind, None if self.kind is AggKind.COUNT else bounds, self.phi)

    def render(self, partial_name: str) -> str:
        params = []
        if self.phi is not None:
            params.append(f"{self.phi:g}")
        if self.bounds is not None:
            params += [f"{self.bounds.lower:g}", f"{self.bounds.upper:g}"]
        elif self.kind is not AggKind.COUNT:
            params.append("APPROX_BOUNDS")
        return f"ANON_{self.kind.value}({', '.join([partial_name] + params)})"


def anon_agg_from_call(call: AnonCall, alias: str) -> AnonAgg:
    """Map ``ANON_<kind>(arg, params...)`` onto an :class:`AnonAgg`."""
    kind = AggKind(call.kind)
    params = tuple(float(p) for p in call.params)
    star = isinstance(call.arg, Star)
    arg = None if star else call.arg
    if star and kind is not AggKind.COUNT:
        raise UnsupportedQueryError(f"ANON_{kind.value} needs a column argument, not *")
    if kind is AggKind.NTILE:
        if len(params) not in (1, 3):
            raise UnsupportedQueryError("ANON_NTILE takes (col, ntile) or (col, ntile, L, U)")
        phi, rest = params[0], params[1:]
    else:
        if len(params) not in (0, 2):
            raise UnsupportedQueryError(f"ANON_{kind.value} takes (col) or (col, L, U)")
        phi, rest = None, params
    bounds = ClampBounds(*rest) if rest else None
    if kind is AggKind.COUNT and bounds is not None:
        return AnonAgg(AggKind.SUM, arg, bounds, None, alias, count_rows=True)
    agg = AnonAgg(kind, arg, bounds, phi, alias)
    agg.spec(bounds or ClampBounds(0.0, 1.0))  # validates phi
    return agg


@dataclass(frozen=True)
class AnonQuery:
    subquery: object  # PlanNode
    keys: tuple[ColumnRef, ...]
    aggs: tuple[AnonAgg, ...]
    outputs: tuple[tuple[str, str, int], ...]  # (name, "key" | "agg", index)

    @classmethod
    def from_node(cls, node: AnonAggregate) -> "AnonQuery":
        return cls(node.child, tuple(node.keys), tuple(node.aggs), tuple(node.outputs))

    def __post_init__(self):
        if not self.aggs:
            raise UnsupportedQueryError("an anonymized query needs at least one ANON_ aggregate")


# -- rewritten plan ---------------------------------------------------------------


@dataclass(eq=False)
class CrossUserAggregate:
    """Render-only node for the cross-user DP aggregation."""

    child: object
    keys: tuple[str, ...]
    aggs: tuple[AnonAgg, ...]
    partial_names: tuple[str, ...]
    shares: EpsilonShares
    user_count_name: str
    threshold_scale: float

    children = property(lambda self: (self.child,))

    def label(self) -> str:
        parts = [
            f"{a.render(p)} AS {a.alias} @eps={s:.6g}"
            for a, p, s in zip(self.aggs, self.partial_names, self.shares.aggregates)
        ]
        parts.append(
            f"ANON_COUNT(*) AS {self.user_count_name} @eps={self.shares.threshold:.6g} "
            f"laplace_scale={self.threshold_scale:.6g} unsnapped"
        )
        return f"DPAggregate[keys=({', '.join(self.keys)}); {'; '.join(parts)}]"


@dataclass(eq=False)
class ThresholdFilter:
    child: object
    user_count_name: str
    tau: float

    children = property(lambda self: (self.child,))

    def label(self) -> str:
        return f"ThresholdFilter[{self.user_count_name} >= tau={self.tau:.6f}]"


@dataclass(eq=False)
class OutputProject:
    child: object
    names: tuple[str, ...]

    children = property(lambda self: (self.child,))

    def label(self) -> str:
        return f"Project[{', '.join(self.names)}]"


@dataclass(eq=False)
class StageRef:
    name: str

    children = property(lambda self: ())

    def label(self) -> str:
        return self.name


USER_COUNT = "user_count"


@dataclass
class RewrittenPlan:
    query: AnonQuery
    budget: PrivacyBudget
    per_user_stage: object
    cross_user_stage: object
    tau: float
    shares: EpsilonShares
    threshold_scale: float
    key_names: tuple[str, ...]
    partial_names: tuple[str, ...]
    leftovers_enabled: bool = False
    bounds_config: ApproxBoundsConfig = field(default_factory=ApproxBoundsConfig)

    @property
    def eps_shares(self) -> tuple[float, ...]:
        return self.shares.aggregates


def rewrite(
    query: AnonQuery | AnonAggregate,
    budget: PrivacyBudget,
    *,
    leftovers: bool = False,
    tau: float | None = None,
    bounds_config: ApproxBoundsConfig | None = None,
) -> RewrittenPlan:
    """Expand the anonymized aggregate. ``tau`` overrides the computed threshold."""
    if isinstance(query, AnonAggregate):
        query = AnonQuery.from_node(query)
    violation = validate_ownership(query.subquery)
    if violation is not None:
        raise OwnershipError(str(violation), type(violation.node).__name__)
    t_schema = query.subquery.schema
    if not t_schema.owned:
        raise OwnershipError("the anonymized input has no uid column", "scan")
    uid_ref = ColumnRef(t_schema.uid_column.name)
    key_names = tuple(t_schema.columns[resolve(t_schema.columns, k)].name for k in query.keys)
    partial_names = tuple(f"partial_{i + 1}" for i in range(len(query.aggs)))
    grouped = GroupAggregate(
        query.subquery,
        (uid_ref,) + tuple(query.keys),
        tuple(a.partial(n) for a, n in zip(query.aggs, partial_names)),
    )
    sampled = Reservoir(grouped, budget.cu)
    items = tuple((ColumnRef(n), n) for n in (uid_ref.name,) + key_names + partial_names)
    per_user = Project(sampled, items)

    shares = split_budget(budget, len(query.aggs))
    eps_threshold = budget.cu * shares.threshold
    tau_value = compute_tau(eps_threshold, budget.delta, budget.cu) if tau is None else float(tau)
    threshold_scale = 1.0 / shares.threshold
    dp = CrossUserAggregate(
        StageRef("U"), key_names, query.aggs, partial_names, shares, USER_COUNT, threshold_scale
    )
    cross = OutputProject(ThresholdFilter(dp, USER_COUNT, tau_value), tuple(o[0] for o in query.outputs))
    return RewrittenPlan(
        query,
        budget,
        per_user,
        cross,
        tau_value,
        shares,
        threshold_scale,
        key_names,
        partial_names,
        leftovers,
        bounds_config or ApproxBoundsConfig(),
    )


def dump_plan(plan: RewrittenPlan) -> str:
    """Stable text of both stages, used by golden tests and ``--explain``."""
    return "U :=\n" + render_plan(plan.per_user_stage, 1) + "\nS :=\n" + render_plan(plan.cross_user_stage, 1) + "\n"


# -- execution --------------------------------------------------------------------


@dataclass(frozen=True)
class ExecutionOptions:
    ci_level: float = 0.95
    snap: bool = True


@dataclass(frozen=True)
class ResultRow:
    values: tuple
    cis: tuple  # (low, high) per column, None for key columns
    leftovers: bool = False


@dataclass
class ResultTable:
    columns: tuple[str, ...]
    kinds: tuple[str, ...]  # "key" or "agg" per column
    rows: list[ResultRow]
    suppressed_count: int
    epsilon: float
    delta: float
    tau: float
    cu: int
    ci_level: float

    @property
    def leftovers_row(self) -> ResultRow | None:
        return next((r for r in self.rows if r.leftovers), None)


def run_per_user_stage(plan: RewrittenPlan, t_rel: Relation, rng: RandomSource) -> Relation:
    """Group ``T(R)`` by (uid, keys) and keep at most ``cu`` rows per user."""
    g = plan.per_user_stage.child.child
    grouped = group_aggregate(t_rel, g.keys, g.aggs)
    sampled = reservoir_per_user(grouped, plan.budget.cu, rng)
    return project(sampled, plan.per_user_stage.items)


def check_contribution_bounds(u_rel: Relation, n_keys: int, cu: int) -> None:
    """Scan-assert one row per (uid, group) and at most ``cu`` groups per uid."""
    seen = set()
    per_user: dict = defaultdict(int)
    for row in u_rel.rows:
        uid, key = row[0], tuple(row[1 : 1 + n_keys])
        if (uid, key) in seen:
            raise DPQueryError(f"user {uid!r} has two rows in group {key!r}")
        seen.add((uid, key))
        per_user[uid] += 1
        if per_user[uid] > cu:
            raise DPQueryError(f"user {uid!r} contributes to more than {cu} groups")


def _partial_values(agg: AnonAgg, column: Sequence) -> list:
    if agg.kind is AggKind.COUNT and not agg.count_rows:
        # a user counts once if they have at least one qualifying row
        return [1 for v in column if v]
    return [v for v in column if v is not None]


def _release_group(plan: RewrittenPlan, members: Sequence[tuple], grng: RandomSource, opts: ExecutionOptions):
    n_keys = len(plan.key_names)
    out = []
    for i, (agg, share) in enumerate(zip(plan.query.aggs, plan.shares.aggregates)):
        arng = grng.child(f"agg:{i}")
        values = _partial_values(agg, [m[1 + n_keys + i] for m in members])
        bounds = agg.bounds
        if bounds is None and agg.kind is not AggKind.COUNT:
            share = share / 2
            try:
                bounds = approx_bounds(values, plan.bounds_config, share, arng.child("bounds"))
            except BoundsInferenceError:
                out.append((None, None))
                continue
        state = AggregatorState.from_values(agg.spec(bounds), values)
        res = result(state, share, arng.child("release"), opts.ci_level, opts.snap, allow_empty=True)
        out.append((res.value, res.ci))
    return out


def _assemble(plan: RewrittenPlan, key, released, leftovers=False) -> ResultRow:
    values, cis = [], []
    for _name, kind, idx in plan.query.outputs:
        if kind == "key":
            values.append(None if key is None else key[idx])
            cis.append(None)
        else:
            v, ci = released[idx]
            values.append(v)
            cis.append(ci)
    return ResultRow(tuple(values), tuple(cis), leftovers)


def _passes_threshold(plan: RewrittenPlan, users: int, rng: RandomSource) -> bool:
    noisy = users + sample_laplace(plan.threshold_scale, rng)
    return noisy >= plan.tau


def _leftovers_members(plan: RewrittenPlan, t_rel: Relation, u_rel: Relation, suppressed: set):
    """Per-user partials over the T(R) rows of every suppressed group the user still contributes to."""
    n_keys = len(plan.key_names)
    kept = {(r[0], tuple(r[1 : 1 + n_keys])) for r in u_rel.rows if tuple(r[1 : 1 + n_keys]) in suppressed}
    key_idx = [resolve(t_rel.columns, k) for k in plan.query.keys]
    rows = [r for r in t_rel.rows if (r[t_rel.uid], tuple(r[i] for i in key_idx)) in kept]
    merged = Relation(t_rel.columns, rows, t_rel.uid)
    g = plan.per_user_stage.child.child
    per_user = group_aggregate(merged, (g.keys[0],), g.aggs)
    # lay rows out like the U stage with NULL keys
    return [(r[0],) + (None,) * n_keys + tuple(r[1:]) for r in per_user.rows]


def execute(
    plan: RewrittenPlan,
    catalog: Mapping[str, Relation],
    rng: RandomSource,
    options: ExecutionOptions | None = None,
) -> ResultTable:
    opts = options or ExecutionOptions()
    t_rel = evaluate(plan.query.subquery, catalog, rng.child("subquery"))
    u_rel = run_per_user_stage(plan, t_rel, rng.child("reservoir"))
    n_keys = len(plan.key_names)
    check_contribution_bounds(u_rel, n_keys, plan.budget.cu)

    groups: dict[tuple, list[tuple]] = defaultdict(list)
    for row in u_rel.rows:
        groups[tuple(row[1 : 1 + n_keys])].append(row)
    released, suppressed = [], set()
    for key in sorted(groups, key=lambda k: tuple(sort_key(v) for v in k)):
        members = groups[key]
        grng = rng.child(f"group:{key!r}")
        if not _passes_threshold(plan, len(members), grng.child("threshold")):
            suppressed.add(key)
            continue
        released.append(_assemble(plan, key, _release_group(plan, members, grng, opts)))

    if plan.leftovers_enabled and suppressed:
        members = _leftovers_members(plan, t_rel, u_rel, suppressed)
        lrng = rng.child("leftovers")
        if members and _passes_threshold(plan, len(members), lrng.child("threshold")):
            released.append(_assemble(plan, None, _release_group(plan, members, lrng, opts), leftovers=True))

    return ResultTable(
        tuple(o[0] for o in plan.query.outputs),
        tuple(o[1] for o in plan.query.outputs),
        released,
        len(suppressed),
        plan.budget.epsilon,
        plan.budget.delta,
        plan.tau,
        plan.budget.cu,
        opts.ci_level,
    )


def describe_agg(agg: AnonAgg) -> str:
    arg = "*" if agg.arg is None else render_expr(agg.arg)
    return agg.render(arg)
