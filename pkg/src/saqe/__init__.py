"""Small-area quantile estimation.

A unit-level mixed model supplies EBLUP small-area means; error
distributions are estimated either by the normal assumption or by
empirical-likelihood tilting of pooled residuals under a density ratio
model.  Six CDF predictors (plus three competitors) feed a common quantile
engine, a parametric bootstrap estimates their MSEs, and a simulation bench
reproduces the repeated-sampling experiments.
"""

__version__ = "0.1.0"

from .bootstrap import BootstrapPlan, MseReport, bootstrap_mse, bootstrap_variant, sample_gk
from .cdfs import (
    CdfEstimate,
    GaussianMixtureCdf,
    QuantileTable,
    StepCdf,
    StepMixtureCdf,
    amse,
    area_mse,
    empirical_quantiles,
    invert,
    trimmed_ratio,
)
from .competitors import MqFit, cdf_mq, cdf_mr, fit_mq, quantile_direct
from .data import (
    AreaSample,
    CensusArea,
    CensusFrame,
    SurveySample,
    load_census_csv,
    load_config,
    load_survey_csv,
    write_survey_csv,
)
from .drm import (
    BASES,
    BasisQ,
    DrmFit,
    GkCdf,
    TiltFit,
    cdf_ebel,
    cdf_el,
    dual_gradient,
    dual_loglik,
    fit_beta_centralized,
    fit_drm,
    fit_tilts,
    gk_cdf,
)
from .errors import (
    ConfigError,
    DataValidationError,
    DegenerateDistributionError,
    NonConvergenceError,
    SaqeError,
    SingularDesignError,
)
from .methods import ALL_METHODS, CENSUS_METHODS, PredictorContext, normalize_method
from .ner import NerFit, cdf_eb, cdf_ner, fit_ner_mle, profile_loglik
from .rng import RngStream
from .simulation import (
    BETA0,
    ExperimentResult,
    Population,
    ScenarioSpec,
    draw_sample,
    gen_population,
    run_experiment,
    shadow_population,
)
