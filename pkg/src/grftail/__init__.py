"""grftail: tail probabilities of exponential integrals of smooth Gaussian
random fields and of the associated doubly-stochastic Poisson counts.

The library computes closed-form asymptotic approximations of
P(int_T exp(mu(t) + sigma f(t)) dt > b) and P(N(T) > b) for smooth
stationary unit-variance Gaussian fields with varying mean, together with
crude Monte Carlo and change-of-measure importance-sampling estimators that
serve as ground truth, and a CLI that runs the bundled simulation-study
study as CSV tables and figures.
"""

from .covariance import (
    ConditionCheck,
    ConditionReport,
    CovarianceKernel,
    SpectralMoments,
    check_conditions,
    gaussian_aniso,
    isotropize,
    second_derivative_pairs,
    spectral_moments,
    squared_exponential,
)
from .domain import Domain, Grid, MeanFunction
from .errors import (
    ConfigError,
    DegenerateHessian,
    DerivativeUnavailable,
    EmbeddingFailure,
    GrfTailError,
    MixedProvenance,
    NoInteriorMax,
    NonPositiveDefinite,
    NoRoot,
    UnsupportedAnisotropy,
    WeightOverflow,
)
from .field_sim import (
    FieldSample,
    GridSampler,
    exponential_integral,
    sample_poisson_count,
    simulate_grf,
    simulate_grf_shifted,
)
from .mc_estimators import (
    EstimatorResult,
    ISWeight,
    count_tail_mc,
    crude_mc,
    importance_sampling,
    merge,
)
from .tail_approx import (
    RHO_GUIDE,
    ApproxResult,
    TailQuery,
    critical_level,
    h_constant,
    rho_diagnostic,
    solve_u,
    tail_count_approx,
    tail_integral_approx,
    tail_laplace_approx,
    threshold_function,
    z_integral_closed_form,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # covariance
    "CovarianceKernel", "SpectralMoments", "ConditionCheck", "ConditionReport",
    "squared_exponential", "gaussian_aniso", "second_derivative_pairs",
    "spectral_moments", "isotropize", "check_conditions",
    # domain & field simulation
    "Domain", "Grid", "MeanFunction", "FieldSample", "GridSampler",
    "simulate_grf", "simulate_grf_shifted", "exponential_integral",
    "sample_poisson_count",
    # tail approximation
    "TailQuery", "ApproxResult", "RHO_GUIDE", "threshold_function", "solve_u",
    "critical_level",
    "z_integral_closed_form", "h_constant", "tail_integral_approx",
    "tail_laplace_approx", "tail_count_approx", "rho_diagnostic",
    # estimators
    "EstimatorResult", "ISWeight", "crude_mc", "importance_sampling",
    "count_tail_mc", "merge",
    # errors
    "GrfTailError", "NonPositiveDefinite", "DerivativeUnavailable",
    "DegenerateHessian", "EmbeddingFailure", "NoRoot", "NoInteriorMax",
    "WeightOverflow", "MixedProvenance", "ConfigError", "UnsupportedAnisotropy",
]
