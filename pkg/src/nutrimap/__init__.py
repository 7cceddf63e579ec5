"""Small-area estimation of micronutrient inadequacy prevalence.

The pipeline: household survey microdata -> per-household inadequacy
indicators -> design-based direct estimates per ADM2 -> Bayesian
spatial smoothing (mean, joint, or cluster-level Beta-binomial models
with BYM2 random effects, fitted by a built-in NUTS sampler) ->
aggregation, diagnostics, and a subsampling validation harness.
"""

from .data import (
    AreaInfo,
    AreaTable,
    ConsumptionLine,
    EnergyRequirementTable,
    FoodCompositionEntry,
    GriddedPopulationCell,
    HouseholdFrame,
    HouseholdRecord,
    SurveyDataset,
    dataset_to_frames,
    derive_urban_shares,
    label_urban_cells,
    load_areas,
    load_cells,
    load_composition,
    load_conversions,
    load_requirements,
    load_survey,
    validate_cluster_consistency,
)
from .design import (
    DirectEstimate,
    PhantomClusterPolicy,
    boundary_adjusted_prevalence,
    cv_classify,
    direct_estimates,
    effective_sample_size,
    effective_sample_variance,
    estimates_table,
    hajek,
    linearized_variance,
    logit_scale,
    phantom_augment,
)
from .diagnostics import ess_bulk, split_rhat
from .errors import (
    AllocationError,
    BoundaryError,
    ConsistencyError,
    ConversionError,
    GraphError,
    NoDataError,
    NumericalError,
    NutrimapError,
    RequirementLookupError,
    SamplingError,
    SchemaError,
    SingleClusterError,
    ValidationError,
)
from .indicators import (
    InadequacyRule,
    adult_female_equivalents,
    apparent_intake,
    daily_quantities,
    household_indicators,
    load_rules,
)
from .models import (
    AreaPrevalenceDraws,
    BetaBinomialModel,
    JointSmoothingModel,
    MeanSmoothingModel,
    PriorConfig,
    aggregate_to_adm1,
    pc_prior_logdensity,
    prevalence_from_draws,
)
from .sampler import (
    Diagnostics,
    GradientReport,
    PosteriorDraws,
    SamplerConfig,
    diagnose,
    gradient_check,
    sample,
)
from .simulation import (
    MetricReport,
    SubsampleDesign,
    adm1_comparison,
    allocate_strata,
    direct_interval_table,
    evaluate,
    run_validation,
    subsample,
    summarize_prevalence,
    winkler_score,
)
from .spatial import AdjacencyGraph, Bym2Scaling, build_graph, bym2_scaling, icar_quadratic
from .synthetic import SyntheticSurvey, icar_draw, synthetic_survey

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "AreaInfo",
    "AreaTable",
    "ConsumptionLine",
    "EnergyRequirementTable",
    "FoodCompositionEntry",
    "GriddedPopulationCell",
    "HouseholdFrame",
    "HouseholdRecord",
    "SurveyDataset",
    "dataset_to_frames",
    "derive_urban_shares",
    "label_urban_cells",
    "load_areas",
    "load_cells",
    "load_composition",
    "load_conversions",
    "load_requirements",
    "load_survey",
    "validate_cluster_consistency",
    # indicators
    "InadequacyRule",
    "adult_female_equivalents",
    "apparent_intake",
    "daily_quantities",
    "household_indicators",
    "load_rules",
    # design estimation
    "DirectEstimate",
    "PhantomClusterPolicy",
    "boundary_adjusted_prevalence",
    "cv_classify",
    "direct_estimates",
    "effective_sample_size",
    "effective_sample_variance",
    "estimates_table",
    "hajek",
    "linearized_variance",
    "logit_scale",
    "phantom_augment",
    # spatial structure
    "AdjacencyGraph",
    "Bym2Scaling",
    "build_graph",
    "bym2_scaling",
    "icar_quadratic",
    # models
    "AreaPrevalenceDraws",
    "BetaBinomialModel",
    "JointSmoothingModel",
    "MeanSmoothingModel",
    "PriorConfig",
    "aggregate_to_adm1",
    "pc_prior_logdensity",
    "prevalence_from_draws",
    # inference
    "Diagnostics",
    "GradientReport",
    "PosteriorDraws",
    "SamplerConfig",
    "diagnose",
    "ess_bulk",
    "gradient_check",
    "sample",
    "split_rhat",
    # validation harness
    "MetricReport",
    "SubsampleDesign",
    "adm1_comparison",
    "allocate_strata",
    "direct_interval_table",
    "evaluate",
    "run_validation",
    "subsample",
    "summarize_prevalence",
    "winkler_score",
    # synthetic data
    "SyntheticSurvey",
    "icar_draw",
    "synthetic_survey",
    # errors
    "AllocationError",
    "BoundaryError",
    "ConsistencyError",
    "ConversionError",
    "GraphError",
    "NoDataError",
    "NumericalError",
    "NutrimapError",
    "RequirementLookupError",
    "SamplingError",
    "SchemaError",
    "SingleClusterError",
    "ValidationError",
]
