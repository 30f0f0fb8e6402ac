"""Synthetic benchmark: rule-based treatment effects and rule-recovery metrics.

Features are 0-indexed here, so the generating coordinates x1, x2, x3 live in
columns 0, 1, 2 and the confounded variant puts the effect on columns 3, 4.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .tree import FitConfig, Tree, fit_hor

__all__ = [
    "SyntheticSpec",
    "RuleMetrics",
    "Rule",
    "generate",
    "tau",
    "rules_for",
    "effect_features",
    "complexity_purity",
    "feature_recovery",
    "generate_partially_observed",
    "benchmark_config",
    "run_benchmark",
    "write_benchmark_csv",
    "BENCH_COLUMNS",
]

RULE_KINDS = ("two_rule", "four_rule")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 1000
    p: int = 10
    k_strength: float = 1.0
    rule_kind: str = "two_rule"
    confounded: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.rule_kind not in RULE_KINDS:
            raise ValueError(f"rule_kind must be one of {RULE_KINDS}")
        if self.p < (5 if self.confounded else 3):
            raise ValueError("need p >= 3 (p >= 5 when confounded)")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class Rule:
    """Conjunction ``x[a] == va and x[b] == vb``."""

    features: tuple
    values: tuple

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X)
        mask = np.ones(X.shape[0], dtype=bool)
        for j, v in zip(self.features, self.values):
            mask &= X[:, j] == v
        return mask


@dataclass(frozen=True)
class RuleMetrics:
    complexity: float
    purity: float
    accuracy: float = float("nan")
    fdr: float = float("nan")


def effect_features(spec: SyntheticSpec) -> tuple[int, int]:
    return (3, 4) if spec.confounded else (0, 1)


def tau(a, b, k: float, rule_kind: str) -> np.ndarray:
    """Treatment effect as a function of the two effect-driving binary features."""
    a, b = np.asarray(a), np.asarray(b)
    if rule_kind == "two_rule":
        out = np.zeros(a.shape)
        out[(a == 0) & (b == 0)] = k
        out[(a == 1) & (b == 1)] = -k
        return out
    out = np.ones(a.shape)
    out[(a == 0) & (b == 1)] = k
    out[(a == 0) & (b == 0)] = 2 * k
    out[(a == 1) & (b == 0)] = -k
    # (1, 1) gets -2k; the four binary cells are exhaustive
    out[(a == 1) & (b == 1)] = -2 * k
    return out


def rules_for(spec: SyntheticSpec) -> list[Rule]:
    fa, fb = effect_features(spec)
    if spec.rule_kind == "two_rule":
        cells = [(0, 0), (1, 1)]
    else:
        cells = [(0, 1), (0, 0), (1, 0), (1, 1)]
    return [Rule((fa, fb), c) for c in cells]


def _expit(z):
    return 1.0 / (1.0 + np.exp(-z))


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset with continuous outcomes and rule-based effects."""
    rng = np.random.default_rng(spec.seed)
    probs = rng.uniform(0.0, 1.0, size=spec.p)
    X = (rng.random((spec.n, spec.p)) < probs).astype(float)
    noise = rng.standard_normal(spec.n)
    u = rng.random(spec.n)
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    y0 = x1 + 0.5 * x2 + x3 + np.exp(x1 - x2 * x3) + noise
    fa, fb = effect_features(spec)
    y1 = y0 + tau(X[:, fa], X[:, fb], spec.k_strength, spec.rule_kind)
    t = (u < _expit(-1.0 + x1 - x2 + x3)).astype(float)
    y = np.where(t == 1, y1, y0)
    return Dataset(X, t, y, feature_names=tuple(f"x{j + 1}" for j in range(spec.p)))


def generate_partially_observed(n: int = 2000, p: int = 5, log_or: float = 1.0,
                                missing_fraction: float = 0.5, seed: int = 0):
    """Binary-outcome data whose treatment is hidden on some outcome-0 rows.

    The log odds ratio is ``log_or * (2 x1 - 1) + (log_or / 2) (2 x4 - 1)``,
    so a depth-2 tree is needed to resolve it. Returns ``(dataset, scores,
    truth)``: ``scores`` are the exact responder propensities
    P(T=1 | x, Y=1) on the missing rows and ``truth`` the hidden treatments.
    """
    rng = np.random.default_rng(seed)
    X = (rng.random((n, p)) < 0.5).astype(float)
    prop = _expit(-0.5 + X[:, 1] - X[:, 2])
    t = (rng.random(n) < prop).astype(float)
    beta = log_or * (2 * X[:, 0] - 1) + 0.5 * log_or * (2 * X[:, 3] - 1)
    base = -0.5 + 0.5 * X[:, 1]
    y = (rng.random(n) < _expit(base + beta * t)).astype(float)
    zeros = np.flatnonzero(y == 0)
    n_miss = min(zeros.size, int(round(missing_fraction * n)))
    hide = np.sort(rng.choice(zeros, size=n_miss, replace=False))
    truth = t[hide].copy()
    p1, p0 = _expit(base + beta), _expit(base)
    responder = prop * p1 / (prop * p1 + (1 - prop) * p0)
    t_obs = t.copy()
    t_obs[hide] = np.nan
    data = Dataset(X, t_obs, y, feature_names=tuple(f"x{j + 1}" for j in range(p)))
    return data, responder[hide], truth


def complexity_purity(tree: Tree, data: Dataset, rules: Sequence[Callable]) -> RuleMetrics:
    """Leaf-cover size and purity of each rule, averaged over rules."""
    leaf = tree.apply(data.X)
    comp, pur = [], []
    for rule in rules:
        hit = rule(data.X)
        if not hit.any():
            warnings.warn(f"rule {rule} matches no observation; skipped", stacklevel=2)
            continue
        cover = np.unique(leaf[hit])
        inside = np.isin(leaf, cover)
        comp.append(float(cover.size))
        pur.append(float(hit[inside].mean()))
    if not comp:
        return RuleMetrics(float("nan"), float("nan"))
    return RuleMetrics(float(np.mean(comp)), float(np.mean(pur)))


def feature_recovery(tree_or_features, target) -> tuple[float, float]:
    """Accuracy |S & target| / |target| and false detection |S - target| / |S|."""
    target = set(target)
    if not target:
        raise ValueError("target set must be nonempty")
    used = tree_or_features.split_features() if isinstance(tree_or_features, Tree) else set(tree_or_features)
    accuracy = len(used & target) / len(target)
    fdr = len(used - target) / len(used) if used else 0.0
    return accuracy, fdr


def benchmark_config(**overrides) -> FitConfig:
    params = dict(p_max=0.1, max_depth=10, min_leaf=20, min_child_fraction=0.05,
                  effect_mode="cate")
    params.update(overrides)
    return FitConfig(**params)


BENCH_COLUMNS = ("seed", "k", "rule_kind", "criterion", "complexity", "purity", "A", "F")


def run_benchmark(ks: Sequence[float], reps: int = 20, rule_kind: str = "two_rule", n: int = 1000,
                  p: int = 10, confounded: bool = False, seed: int = 0,
                  config: FitConfig | None = None) -> list[dict]:
    """Replicate the rule-recovery benchmark; one row per (replication, k).

    Replication ``r`` uses data seed ``seed + r`` for every ``k``, so effect
    strengths are compared on common noise.
    """
    config = config or benchmark_config()
    out = []
    for r in range(reps):
        for k in ks:
            spec = SyntheticSpec(n=n, p=p, k_strength=float(k), rule_kind=rule_kind,
                                 confounded=confounded, seed=seed + r)
            data = generate(spec)
            tree = fit_hor(data, config)
            metrics = complexity_purity(tree, data, rules_for(spec))
            acc, fdr = feature_recovery(tree, effect_features(spec))
            out.append({"seed": spec.seed, "k": float(k), "rule_kind": rule_kind,
                        "criterion": "qstat", "complexity": metrics.complexity,
                        "purity": metrics.purity, "A": acc, "F": fdr})
    return out


def write_benchmark_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in BENCH_COLUMNS])
