"""Optimization-free covariance estimation for random-effect varying-coefficient models.

The package estimates the functional coefficients of a longitudinal
varying-coefficient model by local-linear smoothing under working
independence, then recovers the noise variance and the within-cluster
random-effect covariance in closed form from the smoother residuals.  It
also ships plug-in asymptotic diagnostics, spline-based coefficient
refinement weighted by the estimated covariance, a restricted-likelihood
baseline, and a seeded Monte-Carlo harness.
"""

__version__ = "0.1.0"

from .asymptotics import (
    AsymptoticDiagnostics,
    LeverageConstants,
    bias_terms,
    compute_diagnostics,
    curvature_curve,
    effect_cov_inference,
    leverage_constants,
    noise_variance_inference,
    squared_noise_variance,
)
from .data import (
    Cluster,
    CsvSchema,
    LongitudinalDataset,
    Observation,
    ValidationReport,
    load_dataset,
    validate,
    write_dataset,
)
from .errors import (
    CsvParseError,
    DataValidationError,
    DegenerateKernelError,
    EmptyWindowError,
    NumericalError,
    RankError,
    SchemaError,
    SingularWindowError,
    VcreError,
)
from .kernels import (
    KernelMoments,
    KernelSpec,
    bandwidth_rule,
    kernel_moments,
    tabulated_profile,
)
from .neldermead import SimplexResult, nelder_mead
from .reml import RemlFit, RemlParams, fit_reml, reml_negloglik
from .simulate import (
    ImpTable,
    MseTable,
    ScenarioConfig,
    coefficient_curvature,
    coefficient_values,
    generate,
    run_imp_study,
    run_mse_study,
)
from .smoother import (
    CoefficientCurve,
    ResidualSet,
    fit_curve,
    local_linear_fit,
    residuals,
    write_curve_csv,
)
from .splines import SplineFit, SplineSpec, bspline_basis, fit_wi, fit_wls, imp, mise
from .symmat import (
    DuplicationMap,
    SymMatrix,
    duplication_matrix,
    nearest_psd,
    symmetrize,
    unvech,
    vech,
)
from .varcomp import (
    ClusterProjection,
    EffectEstimates,
    PipelineFit,
    ProjectionSet,
    VarianceComponents,
    cluster_projections,
    estimate_effect_covariance,
    estimate_effects,
    estimate_noise_variance,
    fit_pipeline,
    write_effects_csv,
)
