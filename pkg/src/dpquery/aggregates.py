"""Bounded-contribution ε-DP aggregate functions.

These run at the cross-user stage, where every user contributes at most one
(already partially aggregated) input row per group. Each function clamps its
inputs into ``[L, U]`` and adds Laplace noise scaled to the resulting
sensitivity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsInferenceError, PrivacyParameterError
from .noise import (
    ClampBounds,
    RandomSource,
    clamp,
    laplace_quantile,
    sample_laplace,
    sample_snapped_laplace,
)

__all__ = [
    "AggKind",
    "AggregatorSpec",
    "AggregatorState",
    "NoisyResult",
    "ApproxBoundsConfig",
    "sensitivity_bound",
    "accumulate",
    "result",
    "release",
    "approx_bounds",
    "approx_bounds_threshold",
    "noise_ci",
    "NTILE_RESOLUTION_BITS",
]

NTILE_RESOLUTION_BITS = 20


class AggKind(str, enum.Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    AVG = "AVG"
    VAR = "VAR"
    STDDEV = "STDDEV"
    NTILE = "NTILE"


@dataclass(frozen=True)
class AggregatorSpec:
    kind: AggKind
    bounds: ClampBounds | None = None
    ntile_phi: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AggKind(self.kind))
        if (self.kind is AggKind.COUNT) != (self.bounds is None):
            raise PrivacyParameterError(
                f"{self.kind.value}: clamp bounds are required for every kind except COUNT"
            )
        if self.kind is AggKind.NTILE:
            if self.ntile_phi is None or not 0 < self.ntile_phi < 1:
                raise PrivacyParameterError(f"ntile must lie in (0, 1), got {self.ntile_phi}")
        elif self.ntile_phi is not None:
            raise PrivacyParameterError("ntile parameter only applies to NTILE")


@dataclass(frozen=True)
class NoisyResult:
    value: float
    ci: tuple[float, float]
    epsilon_spent: float


@dataclass(frozen=True)
class ApproxBoundsConfig:
    num_bins: int = 64
    success_prob: float = 1 - 1e-9

    def __post_init__(self):
        if self.num_bins < 2:
            raise PrivacyParameterError("approx bounds needs at least 2 bins per regime")
        if not 0 < self.success_prob < 1:
            raise PrivacyParameterError("success probability must lie in (0, 1)")


def sensitivity_bound(spec: AggregatorSpec) -> float:
    if spec.kind is AggKind.COUNT:
        return 1.0
    lo, hi = spec.bounds.lower, spec.bounds.upper
    if spec.kind is AggKind.SUM:
        return max(abs(lo), abs(hi))
    if spec.kind is AggKind.VAR:
        return (hi - lo) ** 2
    return abs(hi - lo)


@dataclass
class AggregatorState:
    """Accumulators over clamped inputs. Mutable; one writer at a time."""

    spec: AggregatorSpec
    input_count: int = 0
    total: float = 0.0
    total_sq: float = 0.0
    values: list[float] = field(default_factory=list)

    def add(self, x) -> "AggregatorState":
        self.input_count += 1
        if self.spec.kind is AggKind.COUNT:
            return self
        v = clamp(x, self.spec.bounds)
        self.total += v
        self.total_sq += v * v
        if self.spec.kind is AggKind.NTILE:
            self.values.append(v)
        return self

    def merge(self, other: "AggregatorState") -> "AggregatorState":
        if other.spec != self.spec:
            raise ValueError("cannot merge states of different aggregators")
        return AggregatorState(
            self.spec,
            self.input_count + other.input_count,
            self.total + other.total,
            self.total_sq + other.total_sq,
            self.values + other.values,
        )

    @classmethod
    def from_values(cls, spec: AggregatorSpec, values) -> "AggregatorState":
        state = cls(spec)
        for v in values:
            state.add(v)
        return state


def accumulate(state: AggregatorState, x) -> AggregatorState:
    return state.add(x)


def _noisy(center, scale, rng, size, snap):
    if scale == 0:
        return center if size is None else np.full(size, center, dtype=float)
    if snap:
        return sample_snapped_laplace(center, scale, rng, size)
    return center + rng.laplace(scale, size)


def _square_bounds(b: ClampBounds) -> ClampBounds:
    hi = max(b.lower**2, b.upper**2)
    lo = 0.0 if b.lower <= 0 <= b.upper else min(b.lower**2, b.upper**2)
    return ClampBounds(lo, hi)


def _noisy_mean(count, total, bounds, eps, rng, size, snap):
    # Normalizing around the midpoint halves the sum's sensitivity to (U-L)/2.
    mid = (bounds.lower + bounds.upper) / 2
    eps_half = eps / 2
    nsum = _noisy(total - count * mid, bounds.width / (2 * eps_half), rng.child("sum"), size, snap)
    ncount = _noisy(float(count), 1 / eps_half, rng.child("count"), size, snap)
    mean = mid + nsum / np.maximum(1.0, ncount)
    return np.clip(mean, bounds.lower, bounds.upper)


def _ntile(values, phi, bounds, eps, rng, size):
    lo_b, hi_b = bounds.lower, bounds.upper
    shape = () if size is None else size
    if hi_b == lo_b:
        return lo_b if size is None else np.full(size, lo_b)
    iterations = min(64, NTILE_RESOLUTION_BITS)
    ordered = np.sort(np.asarray(values, dtype=float))
    target = phi * len(ordered)
    lo = np.full(shape, lo_b, dtype=float)
    hi = np.full(shape, hi_b, dtype=float)
    for i in range(iterations):
        mid = (lo + hi) / 2
        below = np.searchsorted(ordered, mid, side="left")
        # count-below minus phi*n moves by at most 1 per added or removed row
        noisy = below - target + rng.child(f"step{i}").laplace(iterations / eps, size)
        go_left = noisy >= 0
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
    out = (lo + hi) / 2
    return float(out) if size is None else out


def release(
    state: AggregatorState,
    eps_share: float,
    rng: RandomSource,
    size=None,
    snap: bool = True,
    allow_empty: bool = False,
):
    """Noisy release of ``state``; ``size`` draws independent releases at once.

    ``allow_empty`` permits a release over zero inputs. The planner needs it
    when every user of a released group had a NULL partial value: answering
    NULL there instead would reveal that no user had a value.
    """
    if not (eps_share > 0 and math.isfinite(eps_share)):
        raise PrivacyParameterError(f"epsilon share must be positive, got {eps_share}")
    if state.input_count < 1 and not allow_empty:
        raise PrivacyParameterError("cannot release an aggregate over zero inputs")
    spec, n = state.spec, state.input_count
    kind = spec.kind
    if kind is AggKind.COUNT:
        return _noisy(float(n), 1 / eps_share, rng, size, snap)
    if kind is AggKind.SUM:
        return _noisy(state.total, sensitivity_bound(spec) / eps_share, rng, size, snap)
    if kind is AggKind.AVG:
        return _noisy_mean(n, state.total, spec.bounds, eps_share, rng, size, snap)
    if kind in (AggKind.VAR, AggKind.STDDEV):
        half = eps_share / 2
        mean = _noisy_mean(n, state.total, spec.bounds, half, rng.child("mean"), size, snap)
        sq_bounds = _square_bounds(spec.bounds)
        mean_sq = _noisy_mean(n, state.total_sq, sq_bounds, half, rng.child("meansq"), size, snap)
        var = np.clip(mean_sq - mean**2, 0.0, spec.bounds.width**2)
        return np.sqrt(var) if kind is AggKind.STDDEV else var
    return _ntile(state.values, spec.ntile_phi, spec.bounds, eps_share, rng, size)


def noise_ci(spec: AggregatorSpec, eps_share: float, level: float) -> tuple[float, float]:
    """Symmetric interval holding the added noise with probability ``level``.

    Covers Laplace noise only: clamping bias and thresholding are not
    reflected in the interval.
    """
    if not 0 < level < 1:
        raise PrivacyParameterError(f"confidence level must lie in (0, 1), got {level}")
    if not eps_share > 0:
        raise PrivacyParameterError(f"epsilon share must be positive, got {eps_share}")
    sens = sensitivity_bound(spec)
    if sens == 0:
        return (0.0, 0.0)
    half = laplace_quantile(sens / eps_share, (1 + level) / 2)
    return (-half, half)


def result(
    state: AggregatorState,
    eps_share: float,
    rng: RandomSource,
    level: float = 0.95,
    snap: bool = True,
    allow_empty: bool = False,
) -> NoisyResult:
    value = float(release(state, eps_share, rng, snap=snap, allow_empty=allow_empty))
    lo, hi = noise_ci(state.spec, eps_share, level)
    return NoisyResult(value, (value + lo, value + hi), eps_share)


def approx_bounds_threshold(eps: float, num_bins: int, success_prob: float) -> float:
    """Noisy-count threshold keeping all empty bins below it with probability ``success_prob``.

    Solves ``success_prob = (1 - exp(-t * eps)) ** (num_bins - 1)`` for ``t``.
    """
    if not eps > 0:
        raise PrivacyParameterError("epsilon must be positive")
    root = math.exp(math.log(success_prob) / (num_bins - 1))
    return -math.log1p(-root) / eps


def _log_bin_edges(num_bins: int) -> list[tuple[float, float]]:
    exps = range(-num_bins, num_bins)
    neg = [(-math.ldexp(1.0, k + 1), -math.ldexp(1.0, k)) for k in reversed(exps)]
    pos = [(math.ldexp(1.0, k), math.ldexp(1.0, k + 1)) for k in exps]
    return neg + [(0.0, 0.0)] + pos


def _log_bin_index(values: np.ndarray, num_bins: int) -> np.ndarray:
    v = np.nan_to_num(np.asarray(values, dtype=float), nan=0.0)
    _, e = np.frexp(np.abs(v))
    # |v| in [2**(e-1), 2**e)
    k = np.clip(e - 1, -num_bins, num_bins - 1)
    zero = 2 * num_bins
    idx = np.where(v > 0, zero + 1 + (k + num_bins), zero - 1 - (k + num_bins))
    return np.where(v == 0, zero, idx)


def approx_bounds(values, cfg: ApproxBoundsConfig, eps_share: float, rng: RandomSource) -> ClampBounds:
    """Infer clamp bounds from a noisy base-2 logarithmic histogram.

    Bins cover magnitudes ``[2**k, 2**(k+1))`` for ``k`` in ``[-B, B)`` on each
    sign, plus a zero bin. The upper bound is the upper edge of the largest
    bin whose noisy count exceeds the threshold; the lower bound is the lower
    edge of the smallest such bin.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise BoundsInferenceError("cannot infer bounds from an empty input")
    if not eps_share > 0:
        raise PrivacyParameterError("epsilon share must be positive")
    edges = _log_bin_edges(cfg.num_bins)
    counts = np.bincount(_log_bin_index(values, cfg.num_bins), minlength=len(edges))
    noisy = counts + sample_laplace(1 / eps_share, rng, size=len(edges))
    t = approx_bounds_threshold(eps_share, len(edges), cfg.success_prob)
    hits = np.flatnonzero(noisy > t)
    if hits.size == 0:
        raise BoundsInferenceError(f"no histogram bin exceeded threshold {t:.3f}")
    return ClampBounds(edges[hits[0]][0], edges[hits[-1]][1])
