"""Calibrated randomness: Laplace sampling, snapping, clamping and quantiles."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PrivacyParameterError

__all__ = [
    "PrivacyBudget",
    "ClampBounds",
    "RandomSource",
    "NoiselessSource",
    "clamp",
    "clamp_array",
    "sample_laplace",
    "sample_snapped_laplace",
    "snapping_granularity",
    "laplace_quantile",
    "laplace_cdf",
]


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    cu: int = 1

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise PrivacyParameterError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise PrivacyParameterError(f"delta must lie in [0, 1), got {self.delta}")
        if int(self.cu) != self.cu or self.cu < 1:
            raise PrivacyParameterError(f"cu must be an integer >= 1, got {self.cu}")


@dataclass(frozen=True)
class ClampBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise PrivacyParameterError("clamp bounds must be finite")
        if self.lower > self.upper:
            raise PrivacyParameterError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _label_key(label: str) -> int:
    # Python's hash() is salted per process; substreams must be stable.
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=4).digest(), "little")


@dataclass
class RandomSource:
    """Seedable generator with independent substreams derived by label.

    ``child("x")`` always yields the same stream for the same seed and label
    path, regardless of how much randomness the parent has consumed.
    """

    seed: int | None = None
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    noiseless = False

    def __post_init__(self):
        if self.seed is None:
            self.seed = int(np.random.SeedSequence().entropy % (1 << 63))

    def child(self, label: str) -> "RandomSource":
        return type(self)(self.seed, self.path + (_label_key(label),))

    @property
    def generator(self) -> np.random.Generator:
        # built on first use: many sources only ever derive children
        if self._gen is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen

    def laplace(self, scale: float, size=None):
        return self.generator.laplace(0.0, scale, size)

    def integers(self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))


class NoiselessSource(RandomSource):
    """A source whose Laplace draws are exactly zero.

    Sampling decisions (reservoirs) stay random; mechanisms return their
    un-noised value. Only for tests and sensitivity instrumentation.
    """

    noiseless = True

    def laplace(self, scale: float, size=None):
        return 0.0 if size is None else np.zeros(size)


def clamp(x, bounds: ClampBounds) -> float:
    """Project ``x`` onto ``[lower, upper]``; NaN and -inf go to lower, +inf to upper."""
    if x is None or x != x:
        return float(bounds.lower)
    x = float(x)
    if x >= bounds.upper:
        return float(bounds.upper)
    if x <= bounds.lower:
        return float(bounds.lower)
    return x


def clamp_array(values, bounds: ClampBounds) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    out = np.clip(arr, bounds.lower, bounds.upper)
    out[np.isnan(arr)] = bounds.lower
    return out


def _check_scale(scale: float) -> None:
    if not (scale > 0 and math.isfinite(scale)):
        raise PrivacyParameterError(f"Laplace scale must be positive and finite, got {scale}")


def sample_laplace(scale: float, rng: RandomSource, size=None):
    """Draw from Laplace(0, scale). Reserved for threshold comparisons."""
    _check_scale(scale)
    return rng.laplace(scale, size)


def snapping_granularity(scale: float) -> float:
    """Smallest power of two strictly greater than ``scale``."""
    _check_scale(scale)
    # frexp gives scale = m * 2**e with m in [0.5, 1): 2**e is strictly above scale.
    return math.ldexp(1.0, math.frexp(scale)[1])


def sample_snapped_laplace(center, scale: float, rng: RandomSource, size=None):
    """``center`` plus Laplace noise, rounded to the nearest multiple of the snapping granularity."""
    _check_scale(scale)
    if rng.noiseless:
        return center if size is None else np.full(size, center, dtype=float)
    r = snapping_granularity(scale)
    # + 0.0 folds -0.0 into 0.0 so rendered output is stable.
    noisy = np.rint((np.asarray(center, dtype=float) + rng.laplace(scale, size)) / r) * r + 0.0
    return float(noisy) if size is None and np.ndim(noisy) == 0 else noisy


def laplace_quantile(scale: float, p: float) -> float:
    """Inverse CDF of Laplace(0, scale)."""
    _check_scale(scale)
    if not 0 < p < 1:
        raise PrivacyParameterError(f"quantile level must lie in (0, 1), got {p}")
    if p < 0.5:
        return scale * math.log(2 * p)
    return -scale * math.log(2 - 2 * p)


def laplace_cdf(x, scale: float):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(x / scale), 1 - 0.5 * np.exp(-x / scale))
