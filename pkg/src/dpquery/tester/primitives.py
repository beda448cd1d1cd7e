"""Aggregation primitives exposed to the stochastic tester, including known-bad fixtures.

Each primitive maps a database (a tuple of floats) to ``size`` independent
noisy outputs. The two ``broken_*`` fixtures reproduce calibration mistakes
that the tester is expected to catch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..aggregates import AggKind, AggregatorSpec, AggregatorState, release
from ..errors import UnsupportedQueryError
from ..noise import ClampBounds, RandomSource, clamp_array

__all__ = ["Primitive", "PRIMITIVES", "get_primitive"]

Sampler = Callable[[tuple, RandomSource, int], np.ndarray]


@dataclass(frozen=True)
class Primitive:
    name: str
    epsilon: float
    bounds: ClampBounds | None
    sample: Sampler
    description: str = ""


def _engine(kind: AggKind, phi=None) -> Callable:
    def build(epsilon: float, bounds: ClampBounds, snap: bool) -> Sampler:
        spec = AggregatorSpec(kind, None if kind is AggKind.COUNT else bounds, phi)

        def sample(db, rng, size):
            state = AggregatorState.from_values(spec, db)
            return np.asarray(release(state, epsilon, rng, size=size, snap=snap), dtype=float)

        return sample

    return build


def _broken_avg(epsilon: float, bounds: ClampBounds, snap: bool) -> Sampler:
    # Noisy sum calibrated for a standalone sum, divided by the exact count.
    scale = max(abs(bounds.lower), abs(bounds.upper)) / epsilon

    def sample(db, rng, size):
        total = clamp_array(db, bounds).sum()
        return (total + rng.laplace(scale, size)) / len(db)

    return sample


BROKEN_SUM_BOUNDS = ClampBounds(1.0, 2.0)


def _broken_sum(epsilon: float, bounds: ClampBounds, snap: bool) -> Sampler:
    # Noise scaled by |U - L|, which is too small once L > 0. The database
    # values are shifted into [1, 2] so that the clamped inputs reach U.
    b = BROKEN_SUM_BOUNDS
    scale = (b.upper - b.lower) / epsilon
    offset = (b.lower + b.upper) / 2

    def sample(db, rng, size):
        total = clamp_array(np.asarray(db, dtype=float) + offset, b).sum()
        return total + rng.laplace(scale, size)

    return sample


_BUILDERS = {
    "anon_count": (_engine(AggKind.COUNT), "ANON_COUNT"),
    "anon_sum": (_engine(AggKind.SUM), "ANON_SUM over the configured bounds"),
    "anon_avg": (_engine(AggKind.AVG), "ANON_AVG over the configured bounds"),
    "anon_var": (_engine(AggKind.VAR), "ANON_VAR over the configured bounds"),
    "anon_stddev": (_engine(AggKind.STDDEV), "ANON_STDDEV over the configured bounds"),
    "anon_median": (_engine(AggKind.NTILE, 0.5), "ANON_NTILE at 0.5 over the configured bounds"),
    "broken_avg": (_broken_avg, "noisy sum (scale max(|L|,|U|)/eps) over the exact count; not DP"),
    "broken_sum": (_broken_sum, "sum over [1, 2] with noise scale |U-L|/eps; not DP"),
}

PRIMITIVES = tuple(_BUILDERS)


def get_primitive(name: str, epsilon: float, bounds: ClampBounds, snap: bool = False) -> Primitive:
    try:
        builder, description = _BUILDERS[name]
    except KeyError:
        raise UnsupportedQueryError(f"unknown primitive {name!r}; choose from {', '.join(PRIMITIVES)}") from None
    used = BROKEN_SUM_BOUNDS if name == "broken_sum" else (None if name == "anon_count" else bounds)
    return Primitive(name, epsilon, used, builder(epsilon, bounds, snap), description)
