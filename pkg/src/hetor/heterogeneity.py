"""Cochran's Q test for heterogeneity across disjoint subgroups."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .effects import EffectEstimate

__all__ = [
    "QResult",
    "pooled_estimate",
    "q_statistic",
    "chi_square_cdf",
    "chi_square_sf",
    "regularized_gamma",
]

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 100_000


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"gamma series failed to converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"gamma continued fraction failed (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma(a: float, x: float) -> tuple[float, float]:
    """Return ``(P(a, x), Q(a, x))``, the lower and upper regularized gammas.

    Whichever tail is computed directly is accurate; the other is its
    complement.
    """
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0 or math.isnan(x):
        raise ValueError("x must be >= 0")
    if x == 0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_cont_frac(a, x)
    return 1.0 - q, q


def chi_square_cdf(x: float, df: int) -> float:
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        raise ValueError("chi-square argument must be >= 0")
    return regularized_gamma(df / 2.0, x / 2.0)[0]


def chi_square_sf(x: float, df: int) -> float:
    """Upper tail ``1 - cdf``, computed without cancellation."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        raise ValueError("chi-square argument must be >= 0")
    return regularized_gamma(df / 2.0, x / 2.0)[1]


@dataclass(frozen=True)
class QResult:
    q: float
    df: int
    p_value: float
    pooled_theta: float


def _check(ests: Sequence[EffectEstimate]) -> None:
    for e in ests:
        if not (math.isfinite(e.variance) and e.variance > 0):
            raise ValueError(f"variance must be finite and positive, got {e.variance}")
        if not math.isfinite(e.theta):
            raise ValueError(f"theta must be finite, got {e.theta}")


def pooled_estimate(ests: Sequence[EffectEstimate]) -> float:
    """Inverse-variance weighted mean of the subgroup effects."""
    if len(ests) == 0:
        raise ValueError("pooled estimate of an empty list")
    _check(ests)
    weights = [1.0 / e.variance for e in ests]
    return math.fsum(w * e.theta for w, e in zip(weights, ests)) / math.fsum(weights)


def q_statistic(ests: Sequence[EffectEstimate]) -> QResult:
    """Cochran's Q with its chi-square(K-1) p-value."""
    if len(ests) < 2:
        raise ValueError("Q statistic needs at least two subgroups")
    theta_bar = pooled_estimate(ests)
    q = math.fsum((e.theta - theta_bar) ** 2 / e.variance for e in ests)
    df = len(ests) - 1
    return QResult(q, df, chi_square_sf(q, df), theta_bar)
