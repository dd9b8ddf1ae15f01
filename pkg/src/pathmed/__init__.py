"""Semiparametric estimation of the path-specific effect transmitted
through a mediator but not through a treatment-induced confounder of the
mediator-outcome relation.

The package provides the plug-in (nested-regression) estimator, two
weighted estimators based on treatment-odds density ratios, the locally
efficient multiply robust estimator, bounded-weight and substitution
stabilization, nonparametric bootstrap inference, and a Monte Carlo harness
with cross-checked ground-truth oracles.
"""

from .data import (
    ColumnRoles,
    Dataset,
    DesignMatrix,
    Formula,
    TreatmentCoding,
    build_design,
    formula,
    load_csv,
)
from .errors import PathmedError
from .estimators import (
    NuisanceValues,
    PointEstimate,
    aipw_mean,
    beta_a,
    beta_b,
    beta_mle,
    beta_mr,
    eif,
    evaluate_nuisances,
    format_percent,
    percent_mediated,
    pse,
)
from .glm import FittedGlm, GlmFamily, fit, normal_cdf, predict_mean
from .inference import BootstrapResult, bootstrap, bootstrap_table
from .nuisance import (
    DensityRatioModel,
    NuisanceSet,
    OutcomeCascade,
    WorkingModelSpec,
    assemble_nuisances,
    compatible_formula_union,
    density_ratio,
    fit_outcome_cascade,
    fit_propensity,
)
from .simulation import (
    DgpParams,
    ScenarioModels,
    SimulationReport,
    generate,
    run_monte_carlo,
    scenario_models,
    true_beta,
    true_mean_aprime,
)
from .stabilization import (
    StabilizedPropensity,
    stabilize_propensity,
    stabilized_substitution,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "ColumnRoles",
    "Dataset",
    "DensityRatioModel",
    "DesignMatrix",
    "DgpParams",
    "FittedGlm",
    "Formula",
    "GlmFamily",
    "NuisanceSet",
    "NuisanceValues",
    "OutcomeCascade",
    "PathmedError",
    "PointEstimate",
    "ScenarioModels",
    "SimulationReport",
    "StabilizedPropensity",
    "TreatmentCoding",
    "WorkingModelSpec",
    "aipw_mean",
    "assemble_nuisances",
    "beta_a",
    "beta_b",
    "beta_mle",
    "beta_mr",
    "bootstrap",
    "bootstrap_table",
    "build_design",
    "compatible_formula_union",
    "density_ratio",
    "eif",
    "evaluate_nuisances",
    "fit",
    "fit_outcome_cascade",
    "fit_propensity",
    "format_percent",
    "formula",
    "generate",
    "load_csv",
    "normal_cdf",
    "percent_mediated",
    "predict_mean",
    "pse",
    "run_monte_carlo",
    "scenario_models",
    "stabilize_propensity",
    "stabilized_substitution",
    "true_beta",
    "true_mean_aprime",
]
