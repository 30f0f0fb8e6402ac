import math
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetor.effects import (
    ContingencyTable,
    DegenerateEstimateError,
    EffectEstimate,
    InsufficientDataError,
    build_table,
    cate_estimate,
    log_odds_ratio,
    log_risk_ratio,
    wald_ci,
)

from conftest import ANCHOR_CELLS

cells = st.tuples(*[st.integers(0, 500)] * 4).filter(lambda c: sum(c) > 0)


def oracle_log_or(n00, n01, n10, n11, extra=Fraction(1, 2)):
    a, b, c, d = (Fraction(v) + extra for v in (n11, n10, n01, n00))
    odds_ratio = (a / b) / (c / d)
    var = sum(1 / v for v in (a, b, c, d))
    return math.log(odds_ratio), float(var)


def oracle_log_rr(n00, n01, n10, n11, extra=Fraction(1, 2)):
    n00, n01, n10, n11 = (Fraction(v) + extra for v in (n00, n01, n10, n11))
    r1, r0 = n11 / (n11 + n10), n01 / (n01 + n00)
    var = (1 - r1) / n11 + (1 - r0) / n01
    return math.log(r1 / r0), float(var)


@settings(max_examples=200, deadline=None)
@given(cells)
def test_log_or_matches_exact_rational(c):
    est = log_odds_ratio(ContingencyTable(*c))
    theta, var = oracle_log_or(*c)
    assert est.theta == pytest.approx(theta, rel=1e-10, abs=1e-12)
    assert est.variance == pytest.approx(var, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(cells)
def test_log_rr_matches_exact_rational(c):
    est = log_risk_ratio(ContingencyTable(*c))
    theta, var = oracle_log_rr(*c)
    assert est.theta == pytest.approx(theta, rel=1e-10, abs=1e-12)
    assert est.variance == pytest.approx(var, rel=1e-10)


@given(cells)
def test_or_antisymmetric_under_arm_swap(c):
    n00, n01, n10, n11 = c
    a = log_odds_ratio(ContingencyTable(n00, n01, n10, n11))
    b = log_odds_ratio(ContingencyTable(n10, n11, n00, n01))
    assert a.theta == pytest.approx(-b.theta, abs=1e-12)
    assert a.variance == pytest.approx(b.variance)


def test_uncorrected_zero_cell_raises():
    with pytest.raises(DegenerateEstimateError):
        log_odds_ratio(ContingencyTable(3, 0, 4, 5), correct=False)
    with pytest.raises(DegenerateEstimateError):
        log_risk_ratio(ContingencyTable(3, 0, 4, 5), correct=False)
    # the correction makes the same table estimable
    assert math.isfinite(log_odds_ratio(ContingencyTable(3, 0, 4, 5)).theta)


def test_uncorrected_matches_plain_formula():
    est = log_odds_ratio(ContingencyTable(10, 20, 30, 40), correct=False)
    assert est.theta == pytest.approx(math.log(40 * 10 / (30 * 20)))
    assert est.variance == pytest.approx(1 / 10 + 1 / 20 + 1 / 30 + 1 / 40)


def test_table_validation():
    with pytest.raises(ValueError):
        ContingencyTable(-1, 2, 3, 4)
    with pytest.raises(ValueError):
        ContingencyTable(0, 0, 0, 0)
    with pytest.raises(ValueError):
        ContingencyTable(float("nan"), 1, 1, 1)


def test_build_table_counts_and_weights():
    t = np.array([0, 0, 1, 1, 1, 0])
    y = np.array([0, 1, 0, 1, 1, 0])
    assert build_table(t, y) == ContingencyTable(2, 1, 1, 2)
    w = np.array([1, 2, 3, 4, 5, 6])
    assert build_table(t, y, w) == ContingencyTable(7, 2, 3, 9)


def test_build_table_fractional_treatment():
    tab = build_table([0.25, 1, 0], [0, 1, 1])
    assert tab == ContingencyTable(0.75, 1, 0.25, 1)
    with pytest.raises(ValueError):
        build_table([0.5], [1])
    with pytest.raises(ValueError):
        build_table([np.nan], [0])
    with pytest.raises(ValueError):
        build_table([1], [2])


def test_pre_aggregated_equals_expanded():
    rng = np.random.default_rng(4)
    t = rng.integers(0, 2, 300)
    y = rng.integers(0, 2, 300)
    expanded = build_table(t, y)
    keys, counts = np.unique(np.c_[t, y], axis=0, return_counts=True)
    aggregated = build_table(keys[:, 0], keys[:, 1], counts)
    assert log_odds_ratio(expanded) == log_odds_ratio(aggregated)


def test_scaling_invariance_of_theta():
    tab = ContingencyTable(12, 7, 9, 15)
    a = log_odds_ratio(tab, correct=False)
    b = log_odds_ratio(tab.scaled(10), correct=False)
    assert a.theta == pytest.approx(b.theta)
    assert b.variance == pytest.approx(a.variance / 10)


def test_anchor_table_or_and_ci():
    est = log_odds_ratio(ContingencyTable(*ANCHOR_CELLS))
    lo, hi = wald_ci(est)
    assert round(math.exp(est.theta), 2) == 1.12
    assert (round(lo, 2), round(hi, 2)) == (1.10, 1.14)


def test_wald_ci_contains_estimate_and_widens():
    est = EffectEstimate(0.3, 0.04)
    lo95, hi95 = wald_ci(est, 0.05, exponentiate=False)
    lo99, hi99 = wald_ci(est, 0.01, exponentiate=False)
    assert lo99 < lo95 < 0.3 < hi95 < hi99
    assert hi95 - 0.3 == pytest.approx(1.959963984540054 * 0.2)
    with pytest.raises(ValueError):
        wald_ci(EffectEstimate(0.0, 0.0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30),
       st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_cate_matches_statistics_module(y1, y0):
    t = np.r_[np.ones(len(y1)), np.zeros(len(y0))]
    y = np.r_[y1, y0]
    est = cate_estimate(t, y)
    theta = statistics.fmean(y1) - statistics.fmean(y0)
    var = statistics.variance(y1) / len(y1) + statistics.variance(y0) / len(y0)
    assert est.theta == pytest.approx(theta, rel=1e-10, abs=1e-9)
    assert est.variance == pytest.approx(var, rel=1e-9, abs=1e-9)


def test_cate_requires_two_per_arm():
    with pytest.raises(InsufficientDataError):
        cate_estimate([1, 0, 0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        cate_estimate([2, 0, 0, 1], [1.0, 2.0, 3.0, 4.0])


def test_listed_examples():
    est = log_odds_ratio(ContingencyTable(10, 10, 10, 10), correct=False)
    assert (est.theta, est.variance) == (0.0, pytest.approx(0.4))
    est = log_odds_ratio(ContingencyTable(0, 10, 10, 10))
    assert math.exp(est.theta) == pytest.approx(10.5 * 0.5 / (10.5 * 10.5))
    assert math.exp(log_risk_ratio(ContingencyTable(*ANCHOR_CELLS)).theta) == pytest.approx(1.112, abs=5e-4)
    assert log_risk_ratio(ContingencyTable(10, 10, 10, 10)).theta == 0.0
    lo, hi = wald_ci(EffectEstimate(0.1146, 0.010374 ** 2))
    assert (lo, hi) == (pytest.approx(1.0989, abs=1e-4), pytest.approx(1.1444, abs=1e-4))
    lo, hi = wald_ci(EffectEstimate(0.0, 0.3))
    assert math.log(lo) == pytest.approx(-math.log(hi))
    est = cate_estimate([1, 1, 0, 0], [1, 1, 0, 0])
    assert (est.theta, est.variance) == (1.0, 0.0)
    est = cate_estimate([1, 1, 0, 0, 0], [2, 4, 1, 1, 1])
    assert (est.theta, est.variance) == (2.0, 1.0)


@given(cells)
def test_label_swaps(c):
    n00, n01, n10, n11 = c
    base = log_odds_ratio(ContingencyTable(n00, n01, n10, n11))
    # swapping treatment and outcome together (n01 <-> n10) keeps the odds ratio
    both = log_odds_ratio(ContingencyTable(n00, n10, n01, n11))
    assert both.theta == pytest.approx(base.theta, abs=1e-12)
    # swapping outcome labels only flips the sign
    flipped = log_odds_ratio(ContingencyTable(n01, n00, n11, n10))
    assert flipped.theta == pytest.approx(-base.theta, abs=1e-12)


@given(st.tuples(*[st.integers(10_000, 10**7)] * 4))
def test_correction_vanishes_for_large_cells(c):
    tab = ContingencyTable(*c)
    assert abs(log_odds_ratio(tab).theta - log_odds_ratio(tab, correct=False).theta) < 1e-3


def test_fractional_table_is_expected_bernoulli_table():
    rng = np.random.default_rng(0)
    t = np.r_[rng.random(30), np.ones(10), np.zeros(10)]
    y = np.r_[np.zeros(30), rng.integers(0, 2, 20)]
    expected = build_table(t, y)
    draws = np.array([build_table((rng.random(t.size) < t).astype(float), y).cells()
                      for _ in range(10_000)])
    mean, se = draws.mean(axis=0), draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    for got, m, s in zip(expected.cells(), mean, se):
        assert abs(got - m) <= 3 * s + 1e-12


def test_log_rr_variance_against_bootstrap():
    rng = np.random.default_rng(123)
    n1, n0, p1, p0 = 800, 900, 0.3, 0.2
    tab = ContingencyTable(n0 * (1 - p0), n0 * p0, n1 * (1 - p1), n1 * p1)
    boot = []
    for _ in range(4000):
        r1, r0 = rng.binomial(n1, p1), rng.binomial(n0, p0)
        boot.append(log_risk_ratio(ContingencyTable(n0 - r0, r0, n1 - r1, r1)).theta)
    assert log_risk_ratio(tab).variance == pytest.approx(np.var(boot, ddof=1), rel=0.1)
