"""Decision trees that find subgroups with heterogeneous treatment effects."""

__version__ = "0.1.0"

from .data import Dataset
from .effects import (
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
from .heterogeneity import QResult, chi_square_cdf, chi_square_sf, pooled_estimate, q_statistic
from .io import load_tree, read_csv, tree_to_dict, tree_to_dot, tree_to_json
from .robust import (
    AmbiguitySet,
    RobustTree,
    ScenarioSet,
    fit_rhor,
    gamma_sweep,
    read_scenarios,
    sample_assignment,
    scenario_count,
    write_scenarios,
)
from .tree import (
    FitConfig,
    Tree,
    TreeNode,
    best_split,
    fit_hor,
    fit_multi_treatment,
    predict_leaf,
    recommend_treatment,
    verify_sibling_heterogeneity,
)
