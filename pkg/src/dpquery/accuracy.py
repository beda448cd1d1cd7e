"""Closed-form accuracy estimates shown to analysts before running a query."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import PrivacyParameterError
from .noise import PrivacyBudget, laplace_quantile
from .planner import compute_tau, release_probability

__all__ = ["AccuracyReport", "accuracy_report", "median_noise", "clamp_error_uniform"]


def median_noise(sensitivity: float, epsilon: float) -> float:
    """Median absolute Laplace noise at scale ``sensitivity / epsilon``: ``ln 2 * scale``."""
    if sensitivity < 0:
        raise PrivacyParameterError("sensitivity must be nonnegative")
    if sensitivity == 0:
        return 0.0
    return laplace_quantile(sensitivity / epsilon, 0.75)


def clamp_error_uniform(a: float, b: float, u: float) -> float:
    """Expected error of clamping Uniform[a, b] values to ``u`` from above."""
    if not a < b:
        raise PrivacyParameterError("uniform range needs a < b")
    if u >= b:
        return 0.0
    if u < a:
        raise PrivacyParameterError("clamp bound must be >= a")
    return (b - u) ** 2 / (2 * (b - a))


@dataclass(frozen=True)
class AccuracyReport:
    sensitivity: float
    epsilon: float
    delta: float | None
    cu: int
    median_noise: float
    median_relative_error: float | None
    tau: float | None
    single_user_suppression: float | None
    small_count_suppression_limit: float | None
    clamp_error: float | None

    def lines(self) -> list[str]:
        out = [
            f"median_abs_noise={self.median_noise!r}",
        ]
        if self.median_relative_error is not None:
            out.append(f"median_relative_error={self.median_relative_error!r}")
        if self.tau is not None:
            out += [
                f"tau={self.tau!r}",
                f"single_user_partition_suppression={self.single_user_suppression!r}",
                f"small_count_suppression_limit={self.small_count_suppression_limit!r}",
            ]
        if self.clamp_error is not None:
            out.append(f"expected_clamp_error={self.clamp_error!r}")
        return out


def accuracy_report(
    sensitivity: float,
    epsilon: float,
    delta: float | None = None,
    cu: int = 1,
    true_value: float | None = None,
    uniform: tuple[float, float, float] | None = None,
) -> AccuracyReport:
    """Noise, suppression and clamping estimates.

    ``sensitivity`` is the user-level sensitivity of the released value and
    ``epsilon`` the budget spent on it. When ``delta`` is given, the
    threshold is computed as if ``epsilon`` were the threshold budget.
    ``uniform=(a, b, u)`` requests the clamping error for Uniform[a, b]
    data clamped at ``u``.
    """
    PrivacyBudget(epsilon, 0.0 if delta is None else delta, cu)
    noise = median_noise(sensitivity, epsilon)
    rel = None
    if true_value is not None:
        if true_value == 0:
            raise PrivacyParameterError("relative error needs a nonzero true value")
        rel = noise / abs(true_value)
    tau = supp = limit = None
    if delta is not None:
        tau = compute_tau(epsilon, delta, cu)
        supp = 1 - release_probability(tau, epsilon, cu)
        limit = (1 - delta) ** (1 / cu)
    clamp = None if uniform is None else clamp_error_uniform(*uniform)
    return AccuracyReport(sensitivity, epsilon, delta, cu, noise, rel, tau, supp, limit, clamp)
