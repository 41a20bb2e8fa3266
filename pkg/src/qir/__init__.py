"""Quantile index regression: composite quantile estimation of parametric
quantile families whose indices are single-index functions of covariates,
with extrapolation to extreme levels, sandwich inference, and SCAD/MCP
penalized high-dimensional fits."""

from .errors import (
    DataError,
    DegenerateDensityError,
    DomainError,
    EvaluationError,
    ExperimentError,
    OptimizationError,
    QirError,
    SingularityError,
    TuningError,
)
from .families import (
    FAMILIES,
    GAUSSIAN,
    GLAMBDA,
    TUKEY,
    distinct_at_levels,
    get_family,
    std_normal_quantile,
)
from .inference import (
    CovarianceEstimate,
    density_at_quantile,
    estimate_sandwich,
    predict_quantile_ci,
)
from .loss import LevelGrid, check_loss, check_psi, composite_loss, composite_subgradient
from .model import Dataset, QirModel, TailScaling, default_links, get_link
from .optim import (
    FitConfig,
    FitResult,
    PenaltySpec,
    bls_step,
    fit_cqr,
    fit_regularized,
    mcp_prox,
    scad_derivative,
    scad_penalty,
    scad_prox,
)
from .sim import (
    CoverageConfig,
    HighDimConfig,
    LowDimConfig,
    SimScenario,
    default_beta0,
    generate_sample,
    pes,
    run_coverage_experiment,
    run_highdim_experiment,
    run_lowdim_experiment,
    selection_metrics,
    true_quantile,
)
from .tuning import (
    Selection,
    TuneSpec,
    cross_validate,
    prediction_error,
    quantile_grid,
    rescale_lambda,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
