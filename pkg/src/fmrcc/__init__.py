"""Functional mixture regression control charts.

Profiles are standardized and reduced to principal component scores, a
Gaussian mixture of score regressions is fitted by EM with BIC selection,
and new observations are flagged when the negative log mixture density of
their response scores exceeds a limit calibrated on held-out in-control
data.
"""

from .curves import (
    BasisSpec,
    CurveSample,
    DiscreteCurve,
    FunctionRep,
    Grid,
    ScalingModel,
    Smoother,
    apply_scaling,
    eval_basis,
    fit_smoother,
    inner_product,
    invert_scaling,
    read_curves_csv,
    select_penalty_gcv,
    smooth_penalized,
    standardize_sample,
    write_curves_csv,
)
from .errors import DataError, FitError, NumericalError, RankDeficientError
from .fpca import (
    FpcaModel,
    ScalarScaling,
    assemble_design,
    design_matrix,
    estimate_covariance,
    fit_fpca,
    fit_functional,
    project_scores,
    reconstruct,
)
from .mixreg import (
    CovarianceType,
    EmOptions,
    MixtureModel,
    bic,
    constrain_covariance,
    e_step,
    em_fit,
    kmeans_init,
    m_step,
    select_model,
)
from .monitor import (
    CoefficientCovariance,
    ControlChart,
    FeatureMap,
    MonitoringPipeline,
    PipelineOptions,
    ProfileSet,
    Verdict,
    calibrate_limit,
    coefficient_covariance,
    fit_pipeline,
    monitoring_statistic,
    phase2_monitor,
    prediction_error_covariance,
    studentized_statistic,
)

__version__ = "0.1.0"
