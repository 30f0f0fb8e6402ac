"""Robust fitting when treatment is unobserved on outcome-0 rows.

Unobserved assignments are only known to lie in an ambiguity set: they keep
the ordering of the responder propensity scores and never exceed them. The
set is approximated by a finite list of sampled scenarios; the tree is grown
depth by depth and every new split must survive the scenario (within an L1
budget of the reference assignment) that makes the partition most
homogeneous.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .effects import HALDANE
from .heterogeneity import chi_square_sf, q_statistic
from .tree import FitConfig, Tree, TreeNode, _Grower, _make_model, _ratio_ok, _ratio_theta_var, fit_hor

__all__ = [
    "AmbiguitySet",
    "ScenarioSet",
    "RobustTree",
    "scenario_count",
    "sample_assignment",
    "sample_scenarios",
    "worst_case_index",
    "worst_case_init",
    "partition_q",
    "adversarial_index",
    "adversarial_assignment",
    "gamma_sweep",
    "fit_rhor",
    "write_scenarios",
    "read_scenarios",
]

_BUDGET_TOL = 1e-9


def scenario_count(epsilon: float, beta: float) -> int:
    """Smallest N with N >= (2 / epsilon) (1 - ln beta)."""
    if not (0 < epsilon <= 1 and 0 < beta <= 1):
        raise ValueError("epsilon and beta must lie in (0, 1]")
    bound = 2.0 / epsilon * (1.0 - math.log(beta))
    return max(1, math.ceil(bound - 1e-9))


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """Assignments ``t`` monotone in the score ordering and bounded by the scores."""

    scores: np.ndarray
    order: np.ndarray = field(init=False, repr=False)
    rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        if not np.isfinite(s).all() or (s < 0).any() or (s > 1).any():
            raise ValueError("scores must lie in [0, 1]")
        order = np.argsort(s, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(s.size)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "rank", rank)

    @property
    def size(self) -> int:
        return self.scores.size

    def contains(self, t, atol: float = 0.0) -> bool:
        t = np.asarray(t, dtype=float)
        if t.shape != self.scores.shape:
            return False
        if (t < -atol).any() or (t > self.scores + atol).any():
            return False
        return bool((np.diff(t[self.order]) >= -atol).all())


def sample_assignment(aset: AmbiguitySet, rng: np.random.Generator) -> np.ndarray:
    """Draw one member of ``aset`` by sequential uniform filling.

    Coordinates are visited in random order; each is drawn uniformly between
    the nearest already-assigned values below and above it in score order,
    capped by its own score.
    """
    n = aset.size
    visit = rng.permutation(n).tolist()
    draws = rng.random(n).tolist()
    rank = aset.rank.tolist()
    scores = aset.scores.tolist()
    by_rank = [0.0] * n
    taken: list[int] = []
    out = [0.0] * n
    for i, u in zip(visit, draws):
        r = rank[i]
        pos = bisect_left(taken, r)
        lb = by_rank[taken[pos - 1]] if pos > 0 else 0.0
        ub = by_rank[taken[pos]] if pos < len(taken) else 1.0
        ub = min(ub, scores[i])
        assert lb <= ub, "ambiguity set sampler lost feasibility"
        v = min(max(lb + u * (ub - lb), lb), ub)
        by_rank[r] = v
        out[i] = v
        taken.insert(pos, r)
    return np.array(out)


def sample_scenarios(aset: AmbiguitySet, n_scenarios: int, rng: np.random.Generator) -> np.ndarray:
    return np.array([sample_assignment(aset, rng) for _ in range(n_scenarios)]).reshape(
        n_scenarios, aset.size)


@dataclass(eq=False)
class ScenarioSet:
    """Sampled assignments of the missing coordinates, one per row of ``scenarios``."""

    scenarios: np.ndarray
    t0_index: int = 0
    gamma: float = 0.15
    epsilon: float = 0.05
    beta: float = 0.05

    def __post_init__(self):
        self.scenarios = np.atleast_2d(np.asarray(self.scenarios, dtype=float))
        if self.scenarios.shape[0] == 0:
            raise ValueError("scenario set is empty")
        if not 0 <= self.t0_index < len(self):
            raise ValueError("reference index out of range")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")

    def __len__(self) -> int:
        return self.scenarios.shape[0]

    @property
    def t0(self) -> np.ndarray:
        return self.scenarios[self.t0_index]

    def distances(self) -> np.ndarray:
        return np.abs(self.scenarios - self.t0).sum(axis=1)

    def within_budget(self, gamma: float | None = None) -> np.ndarray:
        gamma = self.gamma if gamma is None else gamma
        m = self.scenarios.shape[1]
        return self.distances() <= m * gamma + _BUDGET_TOL


# ---------------------------------------------------------------------------
# scenario evaluation


def _observed_cells(data: Dataset, rows) -> np.ndarray:
    obs = rows[~np.isnan(data.treatment[rows])]
    t, y, w = data.treatment[obs], data.outcome[obs], data.weights[obs]
    return np.array([np.sum(w * (1 - t) * (1 - y)), np.sum(w * (1 - t) * y),
                     np.sum(w * t * (1 - y)), np.sum(w * t * y)])


def _leaf_cells(data: Dataset, leaf_index: np.ndarray, scenarios: np.ndarray) -> np.ndarray:
    """Cells of every leaf under every scenario, shape ``(N, L, 4)``."""
    miss = np.flatnonzero(data.missing)
    w_miss = data.weights[miss]
    leaves = np.unique(leaf_index)
    out = np.empty((scenarios.shape[0], leaves.size, 4))
    for k, leaf in enumerate(leaves):
        rows = np.flatnonzero(leaf_index == leaf)
        base = _observed_cells(data, rows)
        cols = np.flatnonzero(leaf_index[miss] == leaf)
        treated = np.sum(scenarios[:, cols] * w_miss[cols], axis=1)
        mass = float(np.sum(w_miss[cols]))
        out[:, k, 0] = base[0] + (mass - treated)
        out[:, k, 1] = base[1]
        out[:, k, 2] = base[2] + treated
        out[:, k, 3] = base[3]
    return out


def _theta_var(cells: np.ndarray, mode: str, correct: bool):
    n00, n01, n10, n11 = (cells[..., i] for i in range(4))
    ok = _ratio_ok(n00, n01, n10, n11, correct)
    if correct:
        n00, n01, n10, n11 = n00 + HALDANE, n01 + HALDANE, n10 + HALDANE, n11 + HALDANE
    with np.errstate(divide="ignore", invalid="ignore"):
        theta, var = _ratio_theta_var(n00, n01, n10, n11, mode)
    return theta, var, ok


def _as_matrix(scenarios) -> np.ndarray:
    if isinstance(scenarios, ScenarioSet):
        return scenarios.scenarios
    return np.atleast_2d(np.asarray(scenarios, dtype=float))


def _check_ratio_mode(mode: str) -> None:
    if mode not in ("or", "rr"):
        raise ValueError("robust fitting supports the 'or' and 'rr' effect modes")


def worst_case_index(scenarios, data: Dataset, effect_mode: str = "or", correct: bool = True) -> int:
    """Index of the scenario whose whole-sample ratio is closest to 1."""
    _check_ratio_mode(effect_mode)
    S = _as_matrix(scenarios)
    cells = _leaf_cells(data, np.zeros(data.n, dtype=int), S)[:, 0, :]
    theta, _, ok = _theta_var(cells, effect_mode, correct)
    gap = np.where(ok, np.abs(1.0 - np.exp(theta)), np.inf)
    return int(np.argmin(gap))


def worst_case_init(scenarios, data: Dataset, effect_mode: str = "or", correct: bool = True) -> np.ndarray:
    return _as_matrix(scenarios)[worst_case_index(scenarios, data, effect_mode, correct)].copy()


def partition_q(data: Dataset, leaf_index, scenarios, effect_mode: str = "or",
                correct: bool = True) -> np.ndarray:
    """Cochran's Q of the leaf partition under every scenario (``inf`` if inestimable)."""
    _check_ratio_mode(effect_mode)
    leaf_index = np.asarray(leaf_index)
    theta, var, ok = _theta_var(_leaf_cells(data, leaf_index, _as_matrix(scenarios)),
                                effect_mode, correct)
    good = ok.all(axis=1) & (var > 0).all(axis=1) & np.isfinite(theta).all(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / var
        theta_bar = np.sum(w * theta, axis=1) / np.sum(w, axis=1)
        q = np.sum(w * (theta - theta_bar[:, None]) ** 2, axis=1)
    return np.where(good, q, np.inf)


def adversarial_index(leaf_index, scenario_set: ScenarioSet, data: Dataset,
                      effect_mode: str = "or", correct: bool = True,
                      gamma: float | None = None) -> int:
    """Scenario within the L1 budget minimizing the partition's Q statistic.

    Ties go to the lowest index; with nothing feasible the reference is kept.
    """
    if np.unique(np.asarray(leaf_index)).size < 2:
        raise ValueError("adversarial assignment needs a partition with >= 2 leaves")
    q = partition_q(data, leaf_index, scenario_set, effect_mode, correct)
    feasible = scenario_set.within_budget(gamma) & np.isfinite(q)
    if not feasible.any():
        return scenario_set.t0_index
    return int(np.argmin(np.where(feasible, q, np.inf)))


def adversarial_assignment(leaf_index, scenario_set: ScenarioSet, data: Dataset,
                           effect_mode: str = "or", correct: bool = True) -> np.ndarray:
    if isinstance(leaf_index, Tree):
        leaf_index = leaf_index.apply(data.X)
    idx = adversarial_index(leaf_index, scenario_set, data, effect_mode, correct)
    return scenario_set.scenarios[idx].copy()


def gamma_sweep(data: Dataset, leaf_index, scenario_set: ScenarioSet, gammas,
                effect_mode: str = "or", correct: bool = True) -> list[tuple[float, float, float]]:
    """Worst-case ``(gamma, Q, p-value)`` of a fixed partition over budgets.

    The p-value uses ``len(leaves) - 1`` degrees of freedom.
    """
    leaf_index = np.asarray(leaf_index)
    q = partition_q(data, leaf_index, scenario_set, effect_mode, correct)
    df = np.unique(leaf_index).size - 1
    if df < 1:
        raise ValueError("gamma sweep needs a partition with >= 2 leaves")
    rows = []
    for g in gammas:
        feasible = scenario_set.within_budget(g) & np.isfinite(q)
        q_min = float(q[feasible].min()) if feasible.any() else float(q[scenario_set.t0_index])
        rows.append((float(g), q_min, chi_square_sf(q_min, df)))
    return rows


# ---------------------------------------------------------------------------
# fitting


@dataclass(eq=False)
class RobustTree(Tree):
    scenario_set: ScenarioSet | None = None
    assignment: np.ndarray | None = None


def _leaf_index(root: TreeNode, n: int) -> np.ndarray:
    out = np.empty(n, dtype=int)
    for k, leaf in enumerate(node for node in root.walk() if node.is_leaf):
        out[leaf.rows] = k
    return out


def _missing_scores(data: Dataset, scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float).ravel()
    miss = data.missing
    if s.shape[0] == data.n:
        s = s[miss]
    elif s.shape[0] != int(miss.sum()):
        raise ValueError("scores must cover every row or exactly the missing rows")
    if not np.isfinite(s).all():
        raise ValueError("every missing-treatment row needs a score")
    if (s < 0).any() or (s > 1).any():
        raise ValueError("scores must lie in [0, 1]")
    return s


def fit_rhor(data: Dataset, scores, config: FitConfig | None = None, gamma: float = 0.15,
             epsilon: float = 0.05, beta: float = 0.05, n_scenarios: int | None = None,
             scenarios=None) -> RobustTree:
    """Robust heterogeneous odds-ratio tree.

    ``scores`` are responder propensities for the missing rows. Pass
    ``scenarios`` (matrix or :class:`ScenarioSet`) to replay a fixed set;
    otherwise ``n_scenarios`` (default from ``epsilon`` and ``beta``) are
    drawn with ``config.seed``.
    """
    config = config or FitConfig()
    _check_ratio_mode(config.effect_mode)
    if not data.is_binary_outcome():
        raise ValueError("robust fitting needs 0/1 outcomes")
    if data.weight is not None and data.has_missing():
        raise ValueError("frequency weights are not supported with missing treatments")
    if not data.has_missing():
        tree = fit_hor(data, config)
        return RobustTree(tree.root, config, data.feature_names)
    miss = data.missing
    if (data.outcome[miss] != 0).any():
        raise ValueError("treatment may only be missing on outcome-0 rows")
    observed = data.treatment[~miss]
    if not np.isin(observed, (0.0, 1.0)).all():
        raise ValueError("observed treatments must be 0/1")
    s = _missing_scores(data, scores)

    if scenarios is None:
        n_scen = n_scenarios if n_scenarios is not None else scenario_count(epsilon, beta)
        rng = np.random.default_rng(config.seed)
        matrix = sample_scenarios(AmbiguitySet(s), n_scen, rng)
    else:
        matrix = _as_matrix(scenarios)
        if matrix.shape[1] != s.size:
            raise ValueError("scenario width does not match the missing rows")
    idx0 = worst_case_index(matrix, data, config.effect_mode, config.correction)
    sset = ScenarioSet(matrix, idx0, gamma, epsilon, beta)

    grower = _Grower(data.fill_missing(sset.t0), config, _make_model(config))
    state = {"index": idx0}

    def revalidate(depth, root, split_nodes):
        idx = adversarial_index(_leaf_index(root, data.n), sset, data,
                                config.effect_mode, config.correction)
        state["index"] = idx
        grower.set_data(data.fill_missing(sset.scenarios[idx]))
        for node in split_nodes:
            left = grower.model.estimate(grower.data, node.left.rows)
            right = grower.model.estimate(grower.data, node.right.rows)
            if left is None or right is None:
                p = 1.0
            else:
                p = q_statistic([left, right]).p_value
            if p > config.threshold(depth):
                node.unsplit()
            else:
                node.worst_case_p_value = p

    root = grower.finalize(grower.grow(revalidate))
    return RobustTree(root, config, data.feature_names, scenario_set=sset,
                      assignment=sset.scenarios[state["index"]].copy())


def write_scenarios(path, scenario_set) -> None:
    """One scenario per column, header ``s0, s1, ...``; values round-trip exactly."""
    S = _as_matrix(scenario_set)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"s{j}" for j in range(S.shape[0])])
        for row in S.T:
            writer.writerow([repr(float(v)) for v in row])


def read_scenarios(path) -> np.ndarray:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [[float(v) for v in row] for row in reader]
    if any(len(r) != len(header) for r in cols):
        raise ValueError(f"{path}: ragged scenario file")
    return np.array(cols, dtype=float).T.reshape(len(header), len(cols))
