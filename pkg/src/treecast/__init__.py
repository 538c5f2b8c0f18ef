"""treecast: forecasting through a similarity tree of prediction signals.

Signals are compared by one-sided co-movement, arranged into a rooted
minimum spanning tree, and the forecast target attaches to its currently
dominant signal. Conditional return distributions estimated along the
attachment-to-root path are averaged into a truncated mixture whose mean is
the effective estimate, robust to unforeseeable switches of the driver.
"""

from .attach import (
    AllDegenerateError,
    AttachmentPath,
    InsufficientHistoryError,
    attach_target,
    attachment_scores,
    path_to_root,
)
from .backtest import (
    BacktestConfig,
    EmptyMonthError,
    InsufficientMonthsError,
    LogRow,
    PredictionLog,
    compound_monthly,
    information_coefficient,
    predict_day,
    run_backtest,
)
from .histogram import (
    Axis,
    ConditionalDist,
    HistogramConfig,
    JointHistogram,
    MixtureEstimate,
    RangePolicy,
    conditional_slice,
    confidence_interval,
    effective_estimate,
    estimate_joint,
    mixture,
)
from .panel import (
    FillPolicy,
    NormalizedSlice,
    PanelError,
    Side,
    SignalPanel,
    load_panel,
    one_sided_normalize,
    side_separated,
)
from .simulate import (
    PropositionReport,
    RegimeModel,
    business_days,
    check_parent_centrality,
    check_parent_estimator,
    principal_direction,
    simulate_regime_panel,
    uncertainty_error,
    verify_propositions,
)
from .tree import (
    RootedTree,
    SimilarityMatrix,
    prim_rooted_mst,
    select_widest_tree,
    similarity_matrix,
    tree_width_score,
)

__version__ = "0.1.0"

__all__ = [
    "AllDegenerateError",
    "AttachmentPath",
    "Axis",
    "BacktestConfig",
    "ConditionalDist",
    "EmptyMonthError",
    "FillPolicy",
    "HistogramConfig",
    "InsufficientHistoryError",
    "InsufficientMonthsError",
    "JointHistogram",
    "LogRow",
    "MixtureEstimate",
    "NormalizedSlice",
    "PanelError",
    "PredictionLog",
    "PropositionReport",
    "RangePolicy",
    "RegimeModel",
    "RootedTree",
    "Side",
    "SignalPanel",
    "SimilarityMatrix",
    "attach_target",
    "attachment_scores",
    "business_days",
    "check_parent_centrality",
    "check_parent_estimator",
    "compound_monthly",
    "conditional_slice",
    "confidence_interval",
    "effective_estimate",
    "estimate_joint",
    "information_coefficient",
    "load_panel",
    "mixture",
    "one_sided_normalize",
    "path_to_root",
    "predict_day",
    "prim_rooted_mst",
    "principal_direction",
    "run_backtest",
    "select_widest_tree",
    "side_separated",
    "similarity_matrix",
    "simulate_regime_panel",
    "tree_width_score",
    "uncertainty_error",
    "verify_propositions",
]
