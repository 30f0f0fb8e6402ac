"""
Choosing among several treatments
=================================

Three arms: control and two treatments. Each leaf reports every
treatment-vs-control odds ratio and recommends the best option, where
control counts as an odds ratio of 1.
"""

import math

import numpy as np

from hetor import Dataset, FitConfig, fit_multi_treatment, predict_leaf

rng = np.random.default_rng(1)
n = 6000
X = rng.random((n, 3))
t = rng.integers(0, 3, n).astype(float)
effect = np.select([t == 1, t == 2],
                   [np.where(X[:, 0] < 0.5, 1.0, -0.5), np.where(X[:, 0] < 0.5, -0.5, 1.0)], 0.0)
y = (rng.random(n) < 1 / (1 + np.exp(-(-0.4 + effect)))).astype(float)

tree = fit_multi_treatment(Dataset(X, t, y), FitConfig(min_leaf=100, max_depth=2))
for leaf in tree.leaves():
    ratios = ", ".join(f"T{lab}: {math.exp(est.theta):.2f}" for lab, (est, _) in leaf.treatments.items())
    print(f"leaf {leaf.node_id}: {ratios} -> recommend T{leaf.recommended_treatment}")

print("x0=0.2 ->", predict_leaf(tree, [0.2, 0.5, 0.5]).recommended_treatment)
print("x0=0.8 ->", predict_leaf(tree, [0.8, 0.5, 0.5]).recommended_treatment)
