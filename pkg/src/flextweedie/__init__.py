"""Tweedie regression with exact, quasi- and pseudo-likelihood estimation."""

from .core import (
    Dataset,
    FitResult,
    SupportClass,
    ThetaVector,
    TweedieParams,
    linkinv,
    load_csv,
    mean_vector,
    support_class,
    validate_support,
)
from .density import (
    SeriesReport,
    log_density,
    log_density_series_compound,
    log_density_series_positive_stable,
    log_likelihood,
    prob_zero,
)
from .estimator import TweedieRegressor
from .mle import fit_mle_profile, fit_mle_two_step, profile_loglik
from .pseudo import fit_pseudo_newton, pseudo_loglik, pseudo_score
from .quasi import fit_modified_chaser, godambe_vcov, quasi_score_beta
from .simulate import (
    SCENARIO_PRESETS,
    ScenarioConfig,
    StudySummary,
    r_heavy_tail,
    rtweedie,
    run_study,
    summarize_efficiency,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FitResult",
    "SupportClass",
    "ThetaVector",
    "TweedieParams",
    "TweedieRegressor",
    "SeriesReport",
    "ScenarioConfig",
    "StudySummary",
    "SCENARIO_PRESETS",
    "fit_mle_profile",
    "fit_mle_two_step",
    "fit_modified_chaser",
    "fit_pseudo_newton",
    "godambe_vcov",
    "linkinv",
    "load_csv",
    "log_density",
    "log_density_series_compound",
    "log_density_series_positive_stable",
    "log_likelihood",
    "mean_vector",
    "prob_zero",
    "profile_loglik",
    "pseudo_loglik",
    "pseudo_score",
    "quasi_score_beta",
    "r_heavy_tail",
    "rtweedie",
    "run_study",
    "summarize_efficiency",
    "support_class",
    "validate_support",
    "__version__",
]
