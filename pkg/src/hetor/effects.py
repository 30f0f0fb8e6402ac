"""Effect-size estimators on subsets of observations.

Every estimator returns an :class:`EffectEstimate`, i.e. a point estimate on
an additive scale (log odds ratio, log risk ratio or a mean difference)
together with its asymptotic variance. The splitting criterion only ever
consumes that pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

__all__ = [
    "ContingencyTable",
    "EffectEstimate",
    "DegenerateEstimateError",
    "InsufficientDataError",
    "build_table",
    "log_odds_ratio",
    "log_risk_ratio",
    "cate_estimate",
    "wald_ci",
    "EFFECT_MODES",
]

EFFECT_MODES = ("or", "rr", "cate")

# Haldane-Anscombe correction added to every cell
HALDANE = 0.5


class DegenerateEstimateError(ValueError):
    """Raised when a ratio estimate is undefined (zero cell, no correction)."""


class InsufficientDataError(ValueError):
    """Raised when a subset holds too few observations in some arm."""


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 table of (possibly fractional) counts; ``nty`` = #{T=t, Y=y}."""

    n00: float
    n01: float
    n10: float
    n11: float

    def __post_init__(self):
        cells = (self.n00, self.n01, self.n10, self.n11)
        if any(not math.isfinite(c) or c < 0 for c in cells):
            raise ValueError(f"contingency cells must be finite and >= 0, got {cells}")
        if sum(cells) <= 0:
            raise ValueError("contingency table is empty")

    @property
    def total(self) -> float:
        return self.n00 + self.n01 + self.n10 + self.n11

    def cells(self, correct: bool = False) -> tuple[float, float, float, float]:
        extra = HALDANE if correct else 0.0
        return (self.n00 + extra, self.n01 + extra, self.n10 + extra, self.n11 + extra)

    def scaled(self, c: float) -> "ContingencyTable":
        return ContingencyTable(self.n00 * c, self.n01 * c, self.n10 * c, self.n11 * c)


@dataclass(frozen=True)
class EffectEstimate:
    theta: float
    variance: float
    n_eff: float = float("nan")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


def _is_integral(values: np.ndarray) -> np.ndarray:
    return np.equal(np.floor(values), values)


def build_table(treatment, outcome, weight=None) -> ContingencyTable:
    """Tally a 2x2 table from treatment labels/weights and binary outcomes.

    A fractional treatment ``t`` (only allowed for ``outcome == 0``) counts as
    ``t`` of a treated non-responder and ``1 - t`` of a control one, so the
    cells are expected counts. ``weight`` holds optional frequency weights.
    """
    t = np.asarray(treatment, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("treatment and outcome must be 1-d arrays of equal length")
    w = np.ones_like(t) if weight is None else np.asarray(weight, dtype=float)
    if np.isnan(t).any():
        raise ValueError("missing treatment; impute before building a table")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("outcomes must be 0/1 for contingency tables")
    if ((t < 0) | (t > 1)).any():
        raise ValueError("binary treatment must lie in [0, 1]")
    fractional = ~_is_integral(t)
    if (fractional & (y == 1)).any():
        raise ValueError("fractional treatment is only allowed on outcome-0 rows")
    return ContingencyTable(
        n00=float(np.sum(w * (1 - t) * (1 - y))),
        n01=float(np.sum(w * (1 - t) * y)),
        n10=float(np.sum(w * t * (1 - y))),
        n11=float(np.sum(w * t * y)),
    )


def log_odds_ratio(table: ContingencyTable, correct: bool = True) -> EffectEstimate:
    """Woolf log odds ratio and its variance, optionally Haldane corrected."""
    n00, n01, n10, n11 = table.cells(correct)
    if min(n00, n01, n10, n11) <= 0:
        raise DegenerateEstimateError(f"zero cell in {table}; use correct=True")
    theta = math.log(n11) - math.log(n10) + math.log(n00) - math.log(n01)
    var = 1.0 / n11 + 1.0 / n10 + 1.0 / n01 + 1.0 / n00
    return EffectEstimate(theta, var, table.total)


def log_risk_ratio(table: ContingencyTable, correct: bool = True) -> EffectEstimate:
    """Log risk ratio P(Y=1|T=1)/P(Y=1|T=0) with its delta-method variance."""
    n00, n01, n10, n11 = table.cells(correct)
    if min(n00, n01, n10, n11) <= 0:
        raise DegenerateEstimateError(f"zero cell in {table}; use correct=True")
    treated, control = n11 + n10, n01 + n00
    theta = math.log(n11 / treated) - math.log(n01 / control)
    var = 1.0 / n11 - 1.0 / treated + 1.0 / n01 - 1.0 / control
    return EffectEstimate(theta, var, table.total)


def cate_estimate(treatment, outcome, weight=None) -> EffectEstimate:
    """Difference in arm means with variance s1^2/n1 + s0^2/n0.

    Sample variances are unbiased; each arm needs at least two observations.
    """
    t = np.asarray(treatment, dtype=float)
    y = np.asarray(outcome, dtype=float)
    w = np.ones_like(t) if weight is None else np.asarray(weight, dtype=float)
    if np.isnan(t).any() or not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("CATE needs observed 0/1 treatments")
    parts = []
    for arm in (1.0, 0.0):
        sel = t == arm
        n = float(np.sum(w[sel]))
        if n < 2:
            raise InsufficientDataError(f"arm T={arm:g} has {n:g} < 2 observations")
        mean = float(np.sum(w[sel] * y[sel])) / n
        s2 = float(np.sum(w[sel] * (y[sel] - mean) ** 2)) / (n - 1)
        parts.append((n, mean, s2))
    (n1, m1, s1), (n0, m0, s0) = parts
    return EffectEstimate(m1 - m0, s1 / n1 + s0 / n0, n1 + n0)


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def wald_ci(est: EffectEstimate, alpha: float = 0.05, exponentiate: bool = True):
    """Two-sided ``1 - alpha`` Wald interval, on the ratio scale by default."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not est.variance > 0:
        raise ValueError("Wald interval needs a positive variance")
    half = normal_quantile(1 - alpha / 2) * math.sqrt(est.variance)
    lo, hi = est.theta - half, est.theta + half
    if exponentiate:
        return math.exp(lo), math.exp(hi)
    return lo, hi
