"""Halton low-discrepancy points."""

from __future__ import annotations

from itertools import count

import numpy as np

__all__ = ["first_primes", "halton", "halton_points"]


def first_primes(n: int) -> list[int]:
    primes: list[int] = []
    for k in count(2):
        if len(primes) == n:
            return primes
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)


def halton(index: int, base: int) -> float:
    """Radical inverse of ``index`` in ``base``: digits mirrored about the radix point."""
    if index < 1:
        raise ValueError("halton index must be >= 1")
    if base < 2:
        raise ValueError("halton base must be >= 2")
    out, scale = 0.0, 1.0
    while index:
        index, digit = divmod(index, base)
        scale /= base
        out += digit * scale
    return out


def halton_points(count_: int, dims: int, start: int = 1) -> np.ndarray:
    """``count_`` points in ``[0, 1)^dims`` using the first ``dims`` primes as bases."""
    bases = first_primes(dims)
    return np.array([[halton(i, b) for b in bases] for i in range(start, start + count_)], dtype=float).reshape(
        count_, dims
    )
