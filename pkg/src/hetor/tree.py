"""Greedy recursive partitioning that maximizes Cochran's Q between children.

Each leaf is searched exhaustively over axis-aligned splits ``x_j < t``; the
best split is kept when the chi-square(1) p-value of its two-child Q
statistic is at most ``p_max``. Leaves are grown breadth-first so the robust
variant in :mod:`hetor.robust` can revalidate a whole depth at once.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .data import Dataset
from .effects import (
    EFFECT_MODES,
    HALDANE,
    ContingencyTable,
    EffectEstimate,
    InsufficientDataError,
    cate_estimate,
    log_odds_ratio,
    log_risk_ratio,
    wald_ci,
)
from .heterogeneity import QResult, q_statistic

__all__ = [
    "FitConfig",
    "Split",
    "SplitResult",
    "TreeNode",
    "Tree",
    "best_split",
    "fit_hor",
    "fit_multi_treatment",
    "predict_leaf",
    "verify_sibling_heterogeneity",
    "recommend_treatment",
    "concentration_f",
    "concentration_bound",
]

# relative window inside which fast (cumulative-sum) scores are re-scored exactly
_TIE_WINDOW = 1e-9
_MASS_TOL = 1e-9


@dataclass(frozen=True)
class FitConfig:
    """Fitting parameters.

    ``min_leaf`` and ``min_child_fraction`` enforce (alpha, k)-validity: every
    child keeps at least ``min_leaf`` samples and at least
    ``min_child_fraction`` of its parent. ``quantiles`` restricts thresholds to
    a grid of that many quantile bins (``None`` = every midpoint).
    ``p_max_decay`` multiplies ``p_max`` once per depth level.
    """

    p_max: float = 0.05
    max_depth: int = 5
    min_leaf: int = 10
    min_child_fraction: float = 0.05
    effect_mode: str = "or"
    correction: bool = True
    quantiles: int | None = None
    seed: int = 0
    p_max_decay: float = 1.0
    ci_alpha: float = 0.05
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 < self.p_max < 1:
            raise ValueError("p_max must lie in (0, 1)")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 0 < self.min_child_fraction <= 0.5:
            raise ValueError("min_child_fraction must lie in (0, 0.5]")
        if self.effect_mode not in EFFECT_MODES:
            raise ValueError(f"effect_mode must be one of {EFFECT_MODES}")
        if self.quantiles is not None and self.quantiles < 2:
            raise ValueError("quantile grid needs at least 2 bins")
        if not 0 < self.p_max_decay <= 1:
            raise ValueError("p_max_decay must lie in (0, 1]")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")

    def threshold(self, depth: int) -> float:
        return self.p_max * self.p_max_decay ** depth

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float


@dataclass(frozen=True)
class SplitResult:
    split: Split
    result: QResult
    left: EffectEstimate
    right: EffectEstimate


@dataclass(eq=False)
class TreeNode:
    depth: int
    n_samples: float
    estimate: EffectEstimate | None = None
    ci: tuple | None = None
    split: Split | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    q: float | None = None
    p_value: float | None = None
    worst_case_p_value: float | None = None
    treatments: dict | None = None
    recommended_treatment: int | None = None
    best_ratio: float | None = None
    node_id: int = -1
    rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def walk(self) -> Iterator["TreeNode"]:
        """Breadth-first traversal."""
        queue = [self]
        while queue:
            node = queue.pop(0)
            yield node
            if not node.is_leaf:
                queue.extend((node.left, node.right))

    def unsplit(self) -> None:
        self.split = self.left = self.right = None
        self.q = self.p_value = self.worst_case_p_value = None


@dataclass(eq=False)
class Tree:
    root: TreeNode
    config: FitConfig
    feature_names: tuple
    multi: bool = False
    treatment_labels: tuple = (0, 1)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.root.walk() if n.is_leaf]

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.root.walk())

    def split_features(self) -> set[int]:
        return {n.split.feature for n in self.root.walk() if not n.is_leaf}

    def apply(self, X) -> np.ndarray:
        """Leaf ``node_id`` of every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty(X.shape[0], dtype=int)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.node_id
                continue
            goes_left = X[rows, node.split.feature] < node.split.threshold
            stack.append((node.left, rows[goes_left]))
            stack.append((node.right, rows[~goes_left]))
        return out

    def structure(self) -> list:
        """Hashable summary (splits and estimates) for node-by-node comparison."""
        out = []
        for node in self.root.walk():
            split = None if node.is_leaf else (node.split.feature, node.split.threshold)
            est = None if node.estimate is None else (node.estimate.theta, node.estimate.variance)
            out.append((node.depth, node.n_samples, split, est, node.p_value))
        return out


# ---------------------------------------------------------------------------
# effect models: per-row sufficient statistics + vectorized / exact estimators


def _ratio_theta_var(n00, n01, n10, n11, mode):
    if mode == "or":
        theta = np.log(n11) - np.log(n10) + np.log(n00) - np.log(n01)
        var = 1.0 / n11 + 1.0 / n10 + 1.0 / n01 + 1.0 / n00
    else:
        treated, control = n11 + n10, n01 + n00
        theta = np.log(n11 / treated) - np.log(n01 / control)
        var = 1.0 / n11 - 1.0 / treated + 1.0 / n01 - 1.0 / control
    return theta, var


def _ratio_ok(n00, n01, n10, n11, correct):
    if correct:
        return (n10 + n11 >= 1 - _MASS_TOL) & (n00 + n01 >= 1 - _MASS_TOL)
    return (n00 > 0) & (n01 > 0) & (n10 > 0) & (n11 > 0)


def _ratio_estimate(table: ContingencyTable, mode: str, correct: bool) -> EffectEstimate:
    if mode == "or":
        return log_odds_ratio(table, correct)
    return log_risk_ratio(table, correct)


class _RatioModel:
    def __init__(self, mode: str, correct: bool):
        self.mode = mode
        self.correct = correct
        self.exponentiate = True

    def row_stats(self, data: Dataset) -> np.ndarray:
        t, y, w = data.treatment, data.outcome, data.weights
        return np.column_stack([w * (1 - t) * (1 - y), w * (1 - t) * y,
                                w * t * (1 - y), w * t * y, w])

    def evaluate(self, S):
        n00, n01, n10, n11 = (S[..., i] for i in range(4))
        ok = _ratio_ok(n00, n01, n10, n11, self.correct)
        if self.correct:
            n00, n01, n10, n11 = n00 + HALDANE, n01 + HALDANE, n10 + HALDANE, n11 + HALDANE
        with np.errstate(divide="ignore", invalid="ignore"):
            theta, var = _ratio_theta_var(n00, n01, n10, n11, self.mode)
        return theta, var, ok

    def estimate_arrays(self, t, y, w) -> EffectEstimate | None:
        if len(t) == 0:
            return None
        cells = (float(np.sum(w * (1 - t) * (1 - y))), float(np.sum(w * (1 - t) * y)),
                 float(np.sum(w * t * (1 - y))), float(np.sum(w * t * y)))
        if not _ratio_ok(*cells, self.correct):
            return None
        return _ratio_estimate(ContingencyTable(*cells), self.mode, self.correct)

    def estimate(self, data: Dataset, rows) -> EffectEstimate | None:
        return self.estimate_arrays(data.treatment[rows], data.outcome[rows], data.weights[rows])


class _CateModel:
    exponentiate = False

    def row_stats(self, data: Dataset) -> np.ndarray:
        t, y, w = data.treatment, data.outcome, data.weights
        return np.column_stack([w * t, w * (1 - t), w * t * y, w * (1 - t) * y,
                                w * t * y * y, w * (1 - t) * y * y, w])

    def evaluate(self, S):
        n1, n0, s1, s0, q1, q0 = (S[..., i] for i in range(6))
        ok = (n1 >= 2 - _MASS_TOL) & (n0 >= 2 - _MASS_TOL)
        with np.errstate(divide="ignore", invalid="ignore"):
            m1, m0 = s1 / n1, s0 / n0
            v1 = np.maximum(q1 - s1 * m1, 0.0) / (n1 - 1)
            v0 = np.maximum(q0 - s0 * m0, 0.0) / (n0 - 1)
            return m1 - m0, v1 / n1 + v0 / n0, ok

    def estimate(self, data: Dataset, rows) -> EffectEstimate | None:
        try:
            return cate_estimate(data.treatment[rows], data.outcome[rows], data.weights[rows])
        except InsufficientDataError:
            return None


class _MultiModel:
    """Leaf value is the best treatment-vs-control ratio among treatments 1..m."""

    def __init__(self, n_labels: int, mode: str, correct: bool):
        self.labels = n_labels
        self.ratio = _RatioModel(mode, correct)
        self.exponentiate = True

    def row_stats(self, data: Dataset) -> np.ndarray:
        t, y, w = data.treatment, data.outcome, data.weights
        cols = []
        for lab in range(self.labels):
            hit = (t == lab).astype(float)
            cols += [w * hit * (1 - y), w * hit * y]
        cols.append(w)
        return np.column_stack(cols)

    def evaluate(self, S):
        c0, c1 = S[..., 0], S[..., 1]
        best_theta = np.full(c0.shape, -np.inf)
        best_var = np.full(c0.shape, np.nan)
        any_ok = np.zeros(c0.shape, dtype=bool)
        for lab in range(1, self.labels):
            cell = np.stack([c0, c1, S[..., 2 * lab], S[..., 2 * lab + 1]], axis=-1)
            theta, var, ok = self.ratio.evaluate(cell)
            better = ok & (theta > best_theta)
            best_theta = np.where(better, theta, best_theta)
            best_var = np.where(better, var, best_var)
            any_ok |= ok
        return best_theta, best_var, any_ok

    def per_treatment(self, data: Dataset, rows) -> dict[int, EffectEstimate]:
        t, y, w = data.treatment[rows], data.outcome[rows], data.weights[rows]
        out = {}
        for lab in range(1, self.labels):
            sel = (t == 0) | (t == lab)
            est = self.ratio.estimate_arrays((t[sel] == lab).astype(float), y[sel], w[sel])
            if est is not None:
                out[lab] = est
        return out

    def estimate(self, data: Dataset, rows) -> EffectEstimate | None:
        if len(rows) == 0:
            return None
        best = None
        for est in self.per_treatment(data, rows).values():
            if best is None or est.theta > best.theta:
                best = est
        return best


def _make_model(config: FitConfig, n_labels: int | None = None):
    if n_labels is not None:
        if config.effect_mode == "cate":
            raise ValueError("multi-treatment trees compare ratios; use 'or' or 'rr'")
        return _MultiModel(n_labels, config.effect_mode, config.correction)
    if config.effect_mode == "cate":
        return _CateModel()
    return _RatioModel(config.effect_mode, config.correction)


# ---------------------------------------------------------------------------
# split search


def _candidate_boundaries(xs: np.ndarray, quantiles: int | None) -> np.ndarray:
    distinct = np.nonzero(xs[:-1] < xs[1:])[0]
    if quantiles is None or distinct.size == 0:
        return distinct
    levels = np.arange(1, quantiles) / quantiles
    cut = np.quantile(xs, levels)
    b = np.searchsorted(xs, cut, side="right") - 1
    b = b[(b >= 0) & (b < xs.size - 1)]
    return np.unique(b)


def _midpoint(lo: float, hi: float) -> float:
    mid = 0.5 * (lo + hi)
    return mid if lo < mid <= hi else hi


def _scan_feature(x, stats, n_parent, config, model):
    """Fast scores of every admissible threshold on one feature."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    bounds = _candidate_boundaries(xs, config.quantiles)
    if bounds.size == 0:
        return np.empty(0), np.empty(0)
    cs = np.cumsum(stats[order], axis=0)
    left = cs[bounds]
    right = cs[-1] - left
    n_left, n_right = left[:, -1], right[:, -1]
    floor = max(config.min_leaf, config.min_child_fraction * n_parent) - _MASS_TOL
    valid = (n_left >= floor) & (n_right >= floor)
    theta_l, var_l, ok_l = model.evaluate(left)
    theta_r, var_r, ok_r = model.evaluate(right)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (theta_l - theta_r) ** 2 / (var_l + var_r)
    valid &= ok_l & ok_r & (var_l + var_r > 0) & np.isfinite(q)
    thresholds = np.array([_midpoint(xs[b], xs[b + 1]) for b in bounds[valid]])
    return thresholds, q[valid]


def _exact_split(data, rows, feature, threshold, model):
    goes_left = data.X[rows, feature] < threshold
    left = model.estimate(data, rows[goes_left])
    right = model.estimate(data, rows[~goes_left])
    if left is None or right is None:
        return None
    if not (left.variance > 0 and right.variance > 0):
        return None
    return SplitResult(Split(int(feature), float(threshold)), q_statistic([left, right]), left, right)


def _best_split(data: Dataset, rows: np.ndarray, stats: np.ndarray, config: FitConfig,
                model) -> SplitResult | None:
    sub_stats = stats[rows]
    n_parent = float(sub_stats[:, -1].sum())
    if n_parent < 2 * config.min_leaf - _MASS_TOL:
        return None
    X = data.X[rows]

    def scan(j):
        return _scan_feature(X[:, j], sub_stats, n_parent, config, model)

    if config.n_jobs > 1 and data.p > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            scans = list(pool.map(scan, range(data.p)))
    else:
        scans = [scan(j) for j in range(data.p)]

    q_max = max((q.max() for _, q in scans if q.size), default=None)
    if q_max is None:
        return None
    cutoff = q_max - _TIE_WINDOW * max(1.0, abs(q_max))
    best = None
    for j, (thresholds, q) in enumerate(scans):
        for thr in thresholds[q >= cutoff]:
            res = _exact_split(data, rows, j, thr, model)
            if res is None:
                continue
            # strict improvement keeps the lowest (feature, threshold) on ties
            if best is None or res.result.q > best.result.q:
                best = res
    return best


def best_split(data: Dataset, config: FitConfig, rows=None) -> SplitResult | None:
    """Admissible split of ``rows`` (default: all) maximizing the two-child Q."""
    rows = np.arange(data.n) if rows is None else np.asarray(rows)
    model = _make_model(config, _multi_labels(data) if _is_multi(data) else None)
    return _best_split(data, rows, model.row_stats(data), config, model)


# ---------------------------------------------------------------------------
# growing


class _Grower:
    def __init__(self, data: Dataset, config: FitConfig, model):
        self.config = config
        self.model = model
        self.set_data(data)

    def set_data(self, data: Dataset) -> None:
        self.data = data
        self.stats = self.model.row_stats(data)

    def node_weight(self, rows) -> float:
        return float(self.data.weights[rows].sum())

    def grow(self, revalidate: Callable | None = None) -> TreeNode:
        cfg = self.config
        rows = np.arange(self.data.n)
        if self.model.estimate(self.data, rows) is None:
            raise InsufficientDataError(
                "root subset violates the estimator preconditions "
                "(need both arms; >= 2 per arm for CATE; no zero cell without correction)")
        root = TreeNode(depth=0, n_samples=self.node_weight(rows), rows=rows)
        frontier = [root]
        for depth in range(cfg.max_depth):
            split_nodes = []
            for node in frontier:
                res = _best_split(self.data, node.rows, self.stats, cfg, self.model)
                if res is None or res.result.p_value > cfg.threshold(depth):
                    continue
                self._attach(node, res)
                split_nodes.append(node)
            if revalidate is not None and split_nodes:
                revalidate(depth, root, split_nodes)
            frontier = [c for n in split_nodes if not n.is_leaf for c in (n.left, n.right)]
            if not frontier:
                break
        return root

    def _attach(self, node: TreeNode, res: SplitResult) -> None:
        goes_left = self.data.X[node.rows, res.split.feature] < res.split.threshold
        lrows, rrows = node.rows[goes_left], node.rows[~goes_left]
        node.split = res.split
        node.q, node.p_value = res.result.q, res.result.p_value
        node.left = TreeNode(node.depth + 1, self.node_weight(lrows), rows=lrows)
        node.right = TreeNode(node.depth + 1, self.node_weight(rrows), rows=rrows)

    def finalize(self, root: TreeNode) -> TreeNode:
        """Attach estimates, intervals and ids under the current assignments."""
        alpha = self.config.ci_alpha
        for i, node in enumerate(root.walk()):
            node.node_id = i
            node.estimate = self.model.estimate(self.data, node.rows)
            if node.estimate is not None and node.estimate.variance > 0:
                node.ci = wald_ci(node.estimate, alpha, exponentiate=self.model.exponentiate)
            if isinstance(self.model, _MultiModel):
                per = self.model.per_treatment(self.data, node.rows)
                node.treatments = {lab: (est, wald_ci(est, alpha)) for lab, est in per.items()}
                ratios = [math.exp(per[lab].theta) if lab in per else 0.0
                          for lab in range(1, self.model.labels)]
                node.recommended_treatment, node.best_ratio = recommend_treatment(ratios)
        return root


def _check_binary(data: Dataset, config: FitConfig) -> None:
    if data.has_missing():
        raise ValueError("missing treatments; use hetor.robust.fit_rhor")
    if config.effect_mode == "cate":
        if not np.isin(data.treatment, (0.0, 1.0)).all():
            raise ValueError("CATE trees need 0/1 treatments")
    else:
        if not data.is_binary_outcome():
            raise ValueError("odds/risk ratio trees need 0/1 outcomes")
        if (data.treatment > 1).any():
            raise ValueError("labels above 1; use fit_multi_treatment")


def _is_multi(data: Dataset) -> bool:
    t = data.treatment
    return bool(np.nanmax(t) > 1) if np.isfinite(t).any() else False


def _multi_labels(data: Dataset) -> int:
    return int(np.nanmax(data.treatment)) + 1


def fit_hor(data: Dataset, config: FitConfig | None = None) -> Tree:
    """Fit a heterogeneous-effect tree (odds ratio, risk ratio or CATE)."""
    config = config or FitConfig()
    _check_binary(data, config)
    grower = _Grower(data, config, _make_model(config))
    root = grower.finalize(grower.grow())
    return Tree(root, config, data.feature_names)


def fit_multi_treatment(data: Dataset, config: FitConfig | None = None) -> Tree:
    """Tree over treatments ``0..m`` scored by the best treatment-vs-control ratio.

    The split criterion uses the log ratio of the best real treatment (labels
    ``1..m``) with the variance of that treatment's table against control;
    each node also records which option, control included, it recommends.
    """
    config = config or FitConfig()
    t = data.treatment
    if data.has_missing():
        raise ValueError("multi-treatment fitting needs observed treatments")
    if not (np.floor(t) == t).all():
        raise ValueError("treatment labels must be integers 0..m")
    if not data.is_binary_outcome():
        raise ValueError("odds/risk ratio trees need 0/1 outcomes")
    m = int(t.max())
    if m < 1:
        raise ValueError("need at least one treatment besides control")
    model = _make_model(config, m + 1)
    grower = _Grower(data, config, model)
    root = grower.finalize(grower.grow())
    return Tree(root, config, data.feature_names, multi=True, treatment_labels=tuple(range(m + 1)))


def recommend_treatment(ratios: Sequence[float]) -> tuple[int, float]:
    """Best option given ratios of treatments ``1..m``; control counts as 1.

    Ties go to the lowest label, so control wins unless some treatment is
    strictly better.
    """
    label, value = 0, 1.0
    for i, r in enumerate(ratios, start=1):
        if r > value:
            label, value = i, float(r)
    return label, value


def predict_leaf(tree: Tree, x) -> TreeNode:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {x.shape[0]}")
    node = tree.root
    while not node.is_leaf:
        node = node.left if x[node.split.feature] < node.split.threshold else node.right
    return node


def _route(tree: Tree, data: Dataset) -> dict[int, np.ndarray]:
    rows_of = {}
    stack = [(tree.root, np.arange(data.n))]
    while stack:
        node, rows = stack.pop()
        rows_of[id(node)] = rows
        if not node.is_leaf:
            goes_left = data.X[rows, node.split.feature] < node.split.threshold
            stack.append((node.left, rows[goes_left]))
            stack.append((node.right, rows[~goes_left]))
    return rows_of


def sibling_p_values(tree: Tree, data: Dataset) -> list[float]:
    """Two-child Q-test p-value of every internal node, breadth-first.

    An inestimable child yields ``nan``.
    """
    labels = len(tree.treatment_labels) if tree.multi else None
    model = _make_model(tree.config, labels)
    rows_of = _route(tree, data)
    out = []
    for node in tree.root.walk():
        if node.is_leaf:
            continue
        left = model.estimate(data, rows_of[id(node.left)])
        right = model.estimate(data, rows_of[id(node.right)])
        if left is None or right is None or not (left.variance > 0 and right.variance > 0):
            out.append(float("nan"))
            continue
        out.append(q_statistic([left, right]).p_value)
    return out


def verify_sibling_heterogeneity(tree: Tree, data: Dataset, p_max: float | None = None) -> bool:
    """True iff every pair of siblings is heterogeneous at level ``p_max``."""
    p_max = tree.config.p_max if p_max is None else p_max
    return all(p <= p_max for p in sibling_p_values(tree, data))


def concentration_f(n: int, p: int, k: int, alpha: float) -> float:
    if not (n > k >= 2 and p >= 1 and n >= 3):
        raise ValueError("need n > k >= 2, p >= 1 and n >= 3")
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    inner = math.log(n / k) * (math.log(p * k) + 3 * math.log(math.log(n)))
    return 4.5 * math.sqrt(inner / math.log(1.0 / (1.0 - alpha)))


def concentration_bound(n: int, p: int, k: int, alpha: float, pi0: float) -> float:
    """Uniform deviation radius ``8 f(n, p, k) / (pi0 sqrt(k))`` for leaf log odds ratios."""
    if not 0 < pi0 < 1:
        raise ValueError("pi0 must lie in (0, 1)")
    return 8.0 * concentration_f(n, p, k, alpha) / (pi0 * math.sqrt(k))
