"""Acceptance suite: one test per criterion; a PASS/FAIL line per criterion is
printed in the terminal summary."""
import json
import math
import os
import statistics
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate

from hetor.cli import main
from hetor.effects import (
    ContingencyTable,
    EffectEstimate,
    build_table,
    cate_estimate,
    log_odds_ratio,
    log_risk_ratio,
    wald_ci,
)
from hetor.heterogeneity import chi_square_cdf, pooled_estimate, q_statistic
from hetor.robust import (
    AmbiguitySet,
    ScenarioSet,
    fit_rhor,
    gamma_sweep,
    sample_assignment,
    sample_scenarios,
    scenario_count,
    worst_case_index,
)
from hetor.synthetic import SyntheticSpec, benchmark_config, generate, generate_partially_observed, run_benchmark
from hetor.tree import FitConfig, best_split, fit_hor, fit_multi_treatment, verify_sibling_heterogeneity

from conftest import ANCHOR_CELLS, anchor_dataset, simulate_or, write_csv

criterion = pytest.mark.criterion


@criterion(1, "contingency anchor: OR 1.12, 95% CI (1.10, 1.14)")
def test_c01_contingency_anchor():
    est = log_odds_ratio(ContingencyTable(*ANCHOR_CELLS))
    lo, hi = wald_ci(est, 0.05)
    assert f"{math.exp(est.theta):.2f}" == "1.12"
    assert (f"{lo:.2f}", f"{hi:.2f}") == ("1.10", "1.14")
    # the same numbers from the pre-aggregated rows through the tree fitter
    root = fit_hor(anchor_dataset(), FitConfig()).root
    assert f"{math.exp(root.estimate.theta):.2f}" == "1.12"


@criterion(2, "scenario count: N(0.05, 0.05) = 160")
def test_c02_scenario_count():
    assert scenario_count(0.05, 0.05) == 160


@criterion(3, "sibling heterogeneity holds on 50 seeded fits")
def test_c03_sibling_heterogeneity():
    ks = (0.5, 1.0, 2.0, 4.0, 8.0)
    split_trees = 0
    for seed in range(50):
        spec = SyntheticSpec(n=1000, p=10, k_strength=ks[seed % len(ks)],
                             rule_kind=("two_rule", "four_rule")[seed % 2], seed=seed)
        data = generate(spec)
        tree = fit_hor(data, benchmark_config())
        split_trees += tree.depth > 0
        assert verify_sibling_heterogeneity(tree, data, tree.config.p_max), seed
    assert split_trees >= 40  # the check is not vacuous


def _exact_q(ests):
    th = [Fraction(e.theta) for e in ests]
    w = [1 / Fraction(e.variance) for e in ests]
    bar = sum(wi * ti for wi, ti in zip(w, th)) / sum(w)
    return bar, sum(wi * (ti - bar) ** 2 for wi, ti in zip(w, th))


@criterion(4, "estimator oracles on 200 random tables/subsets (rel 1e-10)")
def test_c04_estimator_oracles():
    rng = np.random.default_rng(2024)
    rel = 1e-10
    half = Fraction(1, 2)
    for _ in range(200):
        cells = rng.integers(0, 200, size=4)
        if cells.sum() == 0:
            cells[0] = 1
        n00, n01, n10, n11 = (Fraction(int(c)) + half for c in cells)
        tab = ContingencyTable(*map(float, cells))

        est = log_odds_ratio(tab)
        assert est.theta == pytest.approx(math.log((n11 * n00) / (n10 * n01)), rel=rel, abs=1e-14)
        assert est.variance == pytest.approx(float(1 / n00 + 1 / n01 + 1 / n10 + 1 / n11), rel=rel)

        est = log_risk_ratio(tab)
        r1, r0 = n11 / (n11 + n10), n01 / (n01 + n00)
        assert est.theta == pytest.approx(math.log(r1 / r0), rel=rel, abs=1e-14)
        assert est.variance == pytest.approx(float((1 - r1) / n11 + (1 - r0) / n01), rel=rel)

        # CATE on a random subset of a random sample, against exact rationals
        n = int(rng.integers(8, 60))
        t = rng.integers(0, 2, n).astype(float)
        t[:2], t[2:4] = 1, 0
        y = np.round(rng.normal(size=n), 6)
        sub = rng.random(n) < 0.7
        sub[:4] = True
        est = cate_estimate(t[sub], y[sub])
        y1 = [Fraction(v) for v in y[sub][t[sub] == 1]]
        y0 = [Fraction(v) for v in y[sub][t[sub] == 0]]
        theta = statistics.mean(y1) - statistics.mean(y0)
        var = statistics.variance(y1) / len(y1) + statistics.variance(y0) / len(y0)
        assert est.theta == pytest.approx(float(theta), rel=rel, abs=1e-12)
        assert est.variance == pytest.approx(float(var), rel=rel)

        k = int(rng.integers(2, 8))
        ests = [EffectEstimate(float(a), float(b))
                for a, b in zip(rng.normal(size=k), rng.uniform(0.01, 2.0, size=k))]
        bar, q = _exact_q(ests)
        res = q_statistic(ests)
        assert res.q == pytest.approx(float(q), rel=rel, abs=1e-13)
        assert res.pooled_theta == pytest.approx(float(bar), rel=rel, abs=1e-13)
        assert pooled_estimate(ests) == pytest.approx(float(bar), rel=rel, abs=1e-13)


def _chi2_pdf(x, df):
    if x <= 0:
        return 0.0
    k = df / 2
    return math.exp((k - 1) * math.log(x) - x / 2 - k * math.log(2) - math.lgamma(k))


def _quad_cdf(x, df):
    opts = dict(args=(df,), epsabs=1e-14, epsrel=1e-13, limit=500)
    mode = max(df - 2.0, 0.0)
    if mode == 0.0 or x <= mode:
        return integrate.quad(_chi2_pdf, 0, x, **opts)[0]
    return integrate.quad(_chi2_pdf, 0, mode, **opts)[0] + integrate.quad(_chi2_pdf, mode, x, **opts)[0]


@criterion(5, "chi-square cdf vs quadrature (1e-8) and df=2 closed form (1e-12)")
def test_c05_chi_square_kernel():
    grid = np.unique(np.r_[0.01, np.geomspace(0.01, 200, 40), np.arange(1, 201, 7), 200.0])
    worst = 0.0
    for df in range(1, 51):
        for x in grid:
            worst = max(worst, abs(chi_square_cdf(x, df) - _quad_cdf(x, df)))
    assert worst < 1e-8, worst
    for x in np.r_[grid, np.linspace(0, 200, 401)]:
        assert abs(chi_square_cdf(x, 2) - (-math.expm1(-x / 2))) < 1e-12


@criterion(6, "sampler membership: 10^4 draws, zero violations")
def test_c06_sampler_membership():
    rng = np.random.default_rng(6)
    violations = 0
    draws = 0
    while draws < 10_000:
        n = int(rng.integers(1, 1001))
        scores = rng.random(n)
        if rng.random() < 0.3:
            scores = np.round(scores, 1)  # many ties
        aset = AmbiguitySet(scores)
        for _ in range(min(50, 10_000 - draws)):
            t = sample_assignment(aset, rng)
            ordered = t[aset.order]
            violations += int((np.diff(ordered) < 0).any() or (t > aset.scores).any() or (t < 0).any())
            draws += 1
    assert draws == 10_000
    assert violations == 0


@criterion(7, "benchmark trend: purity(k=4) > purity(k=0.5), complexity(k=4) <= 2")
def test_c07_benchmark_trend():
    rows = run_benchmark([0.5, 4.0], reps=20, rule_kind="two_rule", n=1000, p=10)
    mean = {k: {c: np.nanmean([r[c] for r in rows if r["k"] == k]) for c in ("purity", "complexity")}
            for k in (0.5, 4.0)}
    assert mean[4.0]["purity"] > mean[0.5]["purity"]
    assert mean[4.0]["complexity"] <= 2.0


@criterion(8, "robustness: worst-case p nondecreasing and depth nonincreasing in gamma")
def test_c08_robust_monotonicity():
    data, scores, _ = generate_partially_observed(n=3000, p=5, log_or=2.0, missing_fraction=0.5, seed=3)
    assert data.missing.mean() == pytest.approx(0.5)
    cfg = FitConfig(p_max=0.01, max_depth=3, min_leaf=50)
    S = sample_scenarios(AmbiguitySet(scores), 160, np.random.default_rng(0))
    gammas = [0.0, 0.05, 0.1, 0.15, 0.3, 0.5]

    trees = [fit_rhor(data, scores, cfg, gamma=g, scenarios=S) for g in gammas]
    depths = [t.depth for t in trees]
    assert all(a >= b for a, b in zip(depths, depths[1:])), depths
    assert depths[0] >= 1

    # depth-1 split: the root split under the reference assignment
    sset = ScenarioSet(S, worst_case_index(S, data))
    ref = best_split(data.fill_missing(sset.t0), cfg)
    assert (trees[0].root.split.feature, trees[0].root.split.threshold) == (
        ref.split.feature, ref.split.threshold)
    leaf_index = (data.X[:, ref.split.feature] < ref.split.threshold).astype(int)
    p = [row[2] for row in gamma_sweep(data, leaf_index, sset, gammas)]
    assert all(a <= b for a, b in zip(p, p[1:])), p
    # where the split survives, the fitter recorded the same worst case
    for tree, pw in zip(trees, p):
        if tree.depth >= 1 and tree.root.split == ref.split:
            assert tree.root.worst_case_p_value == pytest.approx(pw, rel=1e-9)


@criterion(9, "reductions: robust without missing and m=1 multi-treatment equal the plain fit")
def test_c09_reductions():
    for seed in range(10):
        data = simulate_or(n=1000, p=5, seed=seed, effect=0.8 + 0.1 * seed)
        cfg = FitConfig(min_leaf=20, p_max=0.05)
        plain = fit_hor(data, cfg).structure()
        assert len(plain) > 1
        assert fit_rhor(data, [], cfg).structure() == plain
        assert fit_multi_treatment(data, cfg).structure() == plain


def _run(*argv):
    assert main([str(a) for a in argv]) == 0


@criterion(10, "determinism: replayed manifests give byte-identical artifacts")
def test_c10_replay_determinism(tmp_path, capsys):
    jobs = max(8, os.cpu_count() or 1)
    csv_plain = write_csv(tmp_path / "plain.csv", simulate_or(n=3000, p=10, seed=4))
    data, scores, _ = generate_partially_observed(n=2000, p=5, log_or=2.0, seed=3)
    csv_partial = write_csv(tmp_path / "partial.csv", data, scores)
    runs = {
        "fit": ("fit", csv_plain, "--min-leaf", 20, "--format", "dot"),
        "fit_q": ("fit", csv_plain, "--effect", "rr", "--quantile-grid", 16),
        "robust": ("fit-robust", csv_partial, "--min-leaf", 40, "--p-max", 0.01,
                   "--gamma", 0.05, "--gamma-sweep", "0,0.05,0.1,0.5"),
        "bench": ("bench", "--k", "0.5,4", "--reps", 3),
    }
    for name, argv in runs.items():
        out = tmp_path / name
        _run(*argv, "--out", out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["artifacts"]
        for extra in ([], ["--jobs", 1], ["--jobs", jobs]):
            replay_out = tmp_path / f"{name}-replay{len(extra)}-{extra[-1] if extra else 0}"
            _run("replay", out / "manifest.json", "--out", replay_out, *extra)
            for art in manifest["artifacts"]:
                assert (replay_out / art).read_bytes() == (out / art).read_bytes(), (name, art)
    capsys.readouterr()
