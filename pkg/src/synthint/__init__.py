"""Synthetic interventions: counterfactual estimation on panel data.

Learn donor weights on pre-intervention outcomes by principal component
regression, average them over post-intervention donor outcomes to estimate
each unit's counterfactual under any intervention, attach normal confidence
intervals, and gate the whole construction with a subspace-inclusion
hypothesis test. Seedable generators and an experiment harness reproduce
the supporting simulation studies end to end.
"""

__version__ = "0.1.0"

from .estimator import (
    SIEstimate,
    confidence_interval,
    estimate_all,
    estimate_noise_variance,
    estimate_pair,
    estimate_theta,
)
from .experiments import (
    ExperimentReport,
    run_ab_study,
    run_bias,
    run_consistency,
    run_normality,
    se_metric,
)
from .generators import (
    AbGroundTruth,
    GroundTruth,
    Observations,
    ScenarioSpec,
    gen_ab_panel,
    gen_bias,
    gen_consistency,
    gen_elbow,
    gen_normality_dual,
    named_stream,
)
from .panel import (
    DonorView,
    ObservedPanel,
    PanelError,
    SparsityLayout,
    donor_view,
    layout_mask,
    load_panel,
    panel_metadata,
    save_panel,
)
from .pcr import (
    FitError,
    WeightModel,
    fit_weights,
    fit_with_covariates,
    projected_truth,
)
from .spectral import (
    RankPolicy,
    RankSelection,
    SpectralDecomposition,
    decompose,
    select_rank,
    singular_value_band,
)
from .subspace import (
    CriticalValueInputs,
    SubspaceTestResult,
    critical_value,
    heuristic_test,
    run_test,
    test_statistic,
    type2_condition,
)

__all__ = [
    "AbGroundTruth",
    "CriticalValueInputs",
    "DonorView",
    "ExperimentReport",
    "FitError",
    "GroundTruth",
    "Observations",
    "ObservedPanel",
    "PanelError",
    "RankPolicy",
    "RankSelection",
    "SIEstimate",
    "ScenarioSpec",
    "SparsityLayout",
    "SpectralDecomposition",
    "SubspaceTestResult",
    "WeightModel",
    "confidence_interval",
    "critical_value",
    "decompose",
    "donor_view",
    "estimate_all",
    "estimate_noise_variance",
    "estimate_pair",
    "estimate_theta",
    "fit_weights",
    "fit_with_covariates",
    "gen_ab_panel",
    "gen_bias",
    "gen_consistency",
    "gen_elbow",
    "gen_normality_dual",
    "heuristic_test",
    "layout_mask",
    "load_panel",
    "named_stream",
    "panel_metadata",
    "projected_truth",
    "run_ab_study",
    "run_bias",
    "run_consistency",
    "run_normality",
    "run_test",
    "save_panel",
    "se_metric",
    "select_rank",
    "singular_value_band",
    "test_statistic",
    "type2_condition",
]
