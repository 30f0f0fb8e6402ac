"""Column-oriented container for (features, treatment, outcome) triplets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Dataset"]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``(x_i, t_i, y_i)``.

    ``treatment`` holds integer labels ``0..m``, a fractional weight in
    ``[0, 1]`` (outcome-0 rows only), or ``NaN`` when unobserved. ``weight``
    holds optional frequency weights (pre-aggregated rows).
    """

    X: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray | None = None
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(self.treatment, dtype=float).ravel()
        y = np.asarray(self.outcome, dtype=float).ravel()
        n = X.shape[0]
        if t.shape[0] != n or y.shape[0] != n:
            raise ValueError("X, treatment and outcome lengths differ")
        if n == 0:
            raise ValueError("dataset is empty")
        if not np.isfinite(X).all():
            raise ValueError("features must be finite")
        if not np.isfinite(y).all():
            raise ValueError("outcomes must be finite")
        obs = ~np.isnan(t)
        if (t[obs] < 0).any():
            raise ValueError("treatment labels must be >= 0")
        frac = obs & (np.floor(t) != t)
        if (t[frac] > 1).any():
            raise ValueError("fractional treatments must lie in [0, 1]")
        if (y[frac] != 0).any():
            raise ValueError("fractional treatment is only allowed when outcome = 0")
        w = None
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float).ravel()
            if w.shape[0] != n or not np.isfinite(w).all() or (w < 0).any():
                raise ValueError("weights must be finite, >= 0 and one per row")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("one feature name per column required")
        for arr in (X, t, y) + ((w,) if w is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.ones(self.n) if self.weight is None else self.weight

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.treatment)

    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def is_binary_outcome(self) -> bool:
        return bool(np.isin(self.outcome, (0.0, 1.0)).all())

    def with_treatment(self, treatment) -> "Dataset":
        return Dataset(self.X, treatment, self.outcome, self.weight, self.feature_names)

    def fill_missing(self, values) -> "Dataset":
        """Copy with missing treatments replaced, in row order, by ``values``."""
        t = self.treatment.copy()
        miss = self.missing
        values = np.asarray(values, dtype=float)
        if values.shape != (int(miss.sum()),):
            raise ValueError("one value per missing treatment required")
        t[miss] = values
        return self.with_treatment(t)

    def subset(self, rows) -> "Dataset":
        w = None if self.weight is None else self.weight[rows]
        return Dataset(self.X[rows], self.treatment[rows], self.outcome[rows], w,
                       self.feature_names)
