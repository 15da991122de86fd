"""Closed-form asymptotic tail approximations.

For a unit-variance smooth stationary Gaussian field f on a box T with
Hessian(C)(0) = -I, the tail of the exponential integral
I(T) = int_T exp(mu(t) + sigma f(t)) dt satisfies, as b -> infinity,

    P(I(T) > b)  ~  u^{d-1} int_T exp(-(u - mu(t)/sigma)^2 / 2) H(t) dt,

where u is the larger root of (2pi/sigma)^{d/2} u^{-d/2} e^{sigma u} = b
(the field level whose high excursion drives the integral past b) and H
collects the spectral-moment and mean-derivative corrections.  H contains
an m = d(d+1)/2 dimensional Gaussian integral over the second-derivative
coordinates; the integrand is the exponential of a quadratic, so it is
evaluated in closed form by completing the square.

When the mean has a unique interior maximum t*, a Laplace expansion of the
domain integral around t* gives the fully closed form

    P(I(T) > b)  ~  (2pi)^{d/2} |det Hess(mu/sigma)(t*)|^{-1/2} H(t*)
                    u^{d/2-1} exp(-(u - mu(t*)/sigma)^2 / 2).

The same approximations apply verbatim to the tail P(N(T) > b) of the
doubly-stochastic Poisson count driven by intensity exp(mu + sigma f).

The determinant in the Laplace form is taken in absolute value: at an
interior maximum the Hessian is negative definite, so det is negative for
odd d and the literal power is undefined; |det|^{-1/2} is the value the
expansion actually produces.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .covariance import (
    CovarianceKernel,
    SpectralMoments,
    _direction_grid,
    hessian_at_origin,
    isotropize,
    spectral_moments,
)
from .domain import Domain, Grid, MeanFunction
from .errors import NoInteriorMax, NonPositiveDefinite, NoRoot, UnsupportedAnisotropy

__all__ = [
    "TailQuery",
    "ApproxResult",
    "RHO_GUIDE",
    "threshold_function",
    "solve_u",
    "critical_level",
    "z_integral_closed_form",
    "h_constant",
    "tail_integral_approx",
    "tail_laplace_approx",
    "tail_count_approx",
    "rho_diagnostic",
]

# Practical validity guide: the approximation is recommended when the
# inscribed-ball correlation diagnostic rho(T) falls below this value.
RHO_GUIDE = 0.15

_U_RESIDUAL_TOL = 1e-14  # on log g(u) - log b; implies |g(u)-b| <~ 1e-14 b


@dataclass(frozen=True)
class TailQuery:
    """One tail problem: P(int_T exp(mu + sigma f) dt > b)."""

    kernel: CovarianceKernel
    mean: MeanFunction
    domain: Domain
    sigma: float
    b: float

    def __post_init__(self):
        if self.kernel.dim != self.domain.dim or self.mean.dim != self.domain.dim:
            raise ValueError("kernel, mean, and domain dimensions must agree")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.b > 0:
            raise ValueError("threshold b must be positive")


@dataclass(frozen=True)
class ApproxResult:
    """Raw asymptotic value plus diagnostics.

    `probability` is the asymptotic expression as-is and may exceed 1 for
    thresholds below the asymptotic regime; `clamped` is min(probability, 1).
    """

    probability: float
    clamped: float
    u: float
    method: str        # "quadrature" | "laplace"
    quantity: str      # "integral" | "count"
    rho: float
    r: float
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# The critical-level equation
# ---------------------------------------------------------------------------


def threshold_function(u: float, sigma: float, d: int) -> float:
    """g(u) = (2pi/sigma)^{d/2} u^{-d/2} e^{sigma u}."""
    return math.exp(_log_threshold(u, sigma, d))


def _log_threshold(u: float, sigma: float, d: int) -> float:
    return 0.5 * d * (math.log(2 * math.pi) - math.log(sigma) - math.log(u)) + sigma * u


def solve_u(b: float, sigma: float, d: int) -> float:
    """The larger root of g(u) = b on the increasing branch u >= d/(2 sigma).

    g decreases to its minimum at u = d/(2 sigma) and increases afterwards;
    confining a safeguarded Newton iteration on log g to the increasing
    branch therefore selects the larger of the two roots.  The rationale for
    this particular u: conditional on a high excursion of level u at some
    point, the integral concentrates like int exp(u - u|t|^2/2) dt, whose
    value (2pi)^{d/2} u^{-d/2} e^u is matched to b (sigma scales in).

    Raises NoRoot when b <= min g: the threshold lies below the asymptotic
    regime and Monte Carlo should be used instead.
    """
    if not b > 0:
        raise ValueError("b must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be a positive integer")
    u_min = d / (2.0 * sigma)
    log_b = math.log(b)
    if log_b <= _log_threshold(u_min, sigma, d):
        raise NoRoot(
            f"b = {b:g} is at or below min g = {threshold_function(u_min, sigma, d):g} "
            f"(attained at u = {u_min:g}); threshold below the asymptotic regime"
        )
    lo = u_min
    hi = max(log_b / sigma + d, u_min + 1.0)
    while _log_threshold(hi, sigma, d) < log_b:
        hi *= 2.0
    u = min(max(max(u_min + 0.1, log_b / sigma), lo), hi)
    for _ in range(200):
        phi = _log_threshold(u, sigma, d) - log_b
        if abs(phi) <= _U_RESIDUAL_TOL:
            break
        if phi > 0:
            hi = min(hi, u)
        else:
            lo = max(lo, u)
        dphi = sigma - 0.5 * d / u
        step = phi / dphi if dphi > 0 else math.inf
        candidate = u - step
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if candidate == u:
            break
        u = candidate
    return float(u)


# ---------------------------------------------------------------------------
# The constant H
# ---------------------------------------------------------------------------


def _z_quadratic(moments: SpectralMoments, sigma: float):
    """Precision matrix, linear term, and constant of the z-integrand.

    Expanding the two squared norms in the integrand gives
    exp(-z' M z / 2 + v' z - c) with
        M = mu22^{-1} + (mu22^{-1} mu20')(mu22^{-1} mu20')' / schur,
        v = one / (2 sigma),
        c = one' mu22 one / (8 sigma^2).
    """
    a = np.linalg.solve(moments.mu22, moments.mu20)
    s = moments.schur_complement
    M = np.linalg.inv(moments.mu22) + np.outer(a, a) / s
    v = moments.one_vector / (2.0 * sigma)
    c = float(moments.one_vector @ moments.mu22 @ moments.one_vector) / (8.0 * sigma ** 2)
    return M, v, c


def _log_z_integral(moments: SpectralMoments, sigma: float) -> float:
    M, v, c = _z_quadratic(moments, sigma)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite(
            "assembled z-integral precision matrix is not positive definite"
        ) from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    w = np.linalg.solve(M, v)
    return 0.5 * moments.m * math.log(2 * math.pi) - 0.5 * logdet + 0.5 * float(v @ w) - c


def z_integral_closed_form(moments: SpectralMoments, sigma: float) -> float:
    """The m-dimensional Gaussian integral inside H, by completing the square."""
    return math.exp(_log_z_integral(moments, sigma))


def critical_level(query: TailQuery) -> float:
    """The critical level u of a query, after curvature normalization.

    This is the u the approximations actually use: for kernels whose
    Hessian at 0 is not -I, the threshold is first mapped through the same
    lag substitution the approximations apply.
    """
    normalized, _ = _ensure_unit_curvature(query)
    return solve_u(normalized.b, normalized.sigma, normalized.domain.dim)


def _log_h_static(moments: SpectralMoments, sigma: float) -> float:
    """The t-independent part of log H."""
    sign, logdet_gamma = np.linalg.slogdet(moments.gamma)
    if sign <= 0:
        raise NonPositiveDefinite("gamma has nonpositive determinant")
    d = moments.d
    one = moments.one_vector
    quartic = float(one @ moments.mu22 @ one) + moments.quartic_diag_sum
    return (
        -0.5 * logdet_gamma
        - 0.25 * (d + 1) * (d + 2) * math.log(2 * math.pi)
        + quartic / (8.0 * sigma ** 2)
        + _log_z_integral(moments, sigma)
    )


def _log_h_profile(moments: SpectralMoments, mean: MeanFunction, sigma: float,
                   pts: np.ndarray) -> np.ndarray:
    """log H at each row of pts (vectorized over the domain grid)."""
    mu_sig = mean.evaluate_many(pts) / sigma
    grad_sig = mean.gradient_many(pts) / sigma
    hess_tr_sig = np.trace(mean.hessian_many(pts), axis1=-2, axis2=-1) / sigma
    t_term = (moments.d * mu_sig + hess_tr_sig) / (2.0 * sigma) + np.sum(grad_sig ** 2, axis=-1)
    return _log_h_static(moments, sigma) + t_term


def h_constant(moments: SpectralMoments, mean: MeanFunction, sigma: float, t) -> float:
    """The constant H(mu, sigma, t) of the tail approximation."""
    pts = np.asarray(t, dtype=float).reshape(1, -1)
    return float(np.exp(_log_h_profile(moments, mean, sigma, pts)[0]))


# ---------------------------------------------------------------------------
# Domain quadrature and Laplace forms
# ---------------------------------------------------------------------------


def _ensure_unit_curvature(query: TailQuery) -> tuple[TailQuery, bool]:
    """Rewrite the query so the kernel has Hessian -I at the origin.

    The asymptotic formulas assume unit curvature; other kernels enter via
    the affine lag substitution.  Diagonal normalizations keep box domains
    boxes and are applied automatically (domain bounds, mean, and threshold
    are mapped consistently); a rotated anisotropy would map the box to a
    parallelepiped, which is out of scope, so it is rejected.
    """
    H = hessian_at_origin(query.kernel)
    if float(np.max(np.abs(H + np.eye(query.domain.dim)))) <= 1e-6:
        return query, False
    kernel, transform = isotropize(query.kernel)
    diag = np.diag(transform).copy()
    if float(np.max(np.abs(transform - np.diag(diag)))) > 1e-10:
        raise UnsupportedAnisotropy(
            "kernel anisotropy is not axis-aligned: the curvature "
            "normalization would map the box domain to a parallelepiped; "
            "apply isotropize() and restate the problem on a box"
        )
    bounds = [(a / t, b / t) for (a, b), t in zip(query.domain.bounds(), diag)]
    base = query.mean
    row = diag[None, :]

    mean = MeanFunction(
        query.domain.dim,
        evaluate=lambda pts: base.evaluate_many(pts * row),
        gradient=lambda pts: base.gradient_many(pts * row) * row,
        hessian=lambda pts: base.hessian_many(pts * row) * diag[None, :, None] * diag[None, None, :],
        label=base.label + "|rescaled",
    )
    rescaled = TailQuery(
        kernel=kernel,
        mean=mean,
        domain=Domain.from_bounds(bounds),
        sigma=query.sigma,
        b=query.b / float(np.prod(diag)),
    )
    return rescaled, True


def _quadrature_grid(domain: Domain, u: float) -> Grid:
    """Midpoint grid whose spacing resolves the O(u^{-1/2}) concentration
    scale of the integrand (at least 8 nodes per u^{-1/2} length)."""
    per_axis = [
        int(np.clip(math.ceil(8.0 * w * math.sqrt(max(u, 1.0))), 16, 4096))
        for w in domain.widths
    ]
    total = float(np.prod(per_axis))
    cap = 2.0 ** 21
    if total > cap:
        shrink = (total / cap) ** (1.0 / domain.dim)
        per_axis = [max(16, int(n / shrink)) for n in per_axis]
    return Grid.regular(domain, per_axis)


def _diagnostic_warnings(rho: float, probability: float) -> tuple[str, ...]:
    warnings = []
    if rho >= RHO_GUIDE:
        warnings.append("small_domain")
    if probability > 1.0:
        warnings.append("small_b_regime")
    return tuple(warnings)


def tail_integral_approx(query: TailQuery, resolution=None,
                         moments: SpectralMoments | None = None) -> ApproxResult:
    """Tail approximation by midpoint quadrature of the domain integral.

    Diagnostics include rho(T); values of rho at or above `RHO_GUIDE` flag
    the domain as small relative to the correlation length, the regime in
    which the approximation is known to overestimate.
    """
    r, rho = rho_diagnostic(query.kernel, query.domain)
    query, rescaled = _ensure_unit_curvature(query)
    d = query.domain.dim
    u = solve_u(query.b, query.sigma, d)
    if moments is None or rescaled:
        moments = spectral_moments(query.kernel)
    grid = _quadrature_grid(query.domain, u) if resolution is None else Grid.regular(
        query.domain, resolution
    )
    mu_sig = query.mean.evaluate_many(grid.nodes) / query.sigma
    log_h = _log_h_profile(moments, query.mean, query.sigma, grid.nodes)
    log_integrand = -0.5 * (u - mu_sig) ** 2 + log_h
    log_prob = (
        (d - 1) * math.log(u)
        + float(logsumexp(log_integrand))
        + math.log(grid.cell_volume)
    )
    with np.errstate(over="ignore"):
        probability = float(np.exp(log_prob))
    return ApproxResult(
        probability=probability,
        clamped=min(probability, 1.0),
        u=u,
        method="quadrature",
        quantity="integral",
        rho=rho,
        r=r,
        warnings=_diagnostic_warnings(rho, probability),
    )


def _locate_interior_max(mean: MeanFunction, domain: Domain, resolution: int = 64,
                         tie_tol: float = 1e-6) -> np.ndarray:
    """Grid argmax of the mean plus derivative-free local refinement.

    Raises NoInteriorMax when the mean is constant, the argmax cell touches
    the boundary, or several well-separated grid points tie within tie_tol.
    """
    grid = Grid.regular(domain, resolution)
    mu = mean.evaluate_many(grid.nodes)
    scale = 1.0 + float(np.max(np.abs(mu)))
    if float(np.max(mu) - np.min(mu)) <= 1e-12 * scale:
        raise NoInteriorMax("mean is constant: no unique maximizer")
    flat_idx = int(np.argmax(mu))
    idx = np.unravel_index(flat_idx, grid.shape)
    if any(i == 0 or i == n - 1 for i, n in zip(idx, grid.shape)):
        raise NoInteriorMax(
            f"mean argmax near {np.round(grid.nodes[flat_idx], 4)} lies on the boundary"
        )
    candidates = grid.nodes[mu >= np.max(mu) - tie_tol]
    spread = np.max(candidates, axis=0) - np.min(candidates, axis=0)
    cell_widths = domain.widths / np.asarray(grid.shape)
    if float(np.linalg.norm(spread)) > 2.0 * float(np.linalg.norm(cell_widths)):
        raise NoInteriorMax(
            f"multiple maxima tie within {tie_tol:g} across a span of {spread}"
        )
    start = grid.nodes[flat_idx]
    result = minimize(
        lambda x: -mean.evaluate_many(x.reshape(1, -1))[0],
        start,
        method="Nelder-Mead",
        bounds=domain.bounds(),
        options={"xatol": 1e-9, "fatol": 1e-14 * scale, "maxiter": 20000, "maxfev": 20000},
    )
    return np.asarray(result.x, dtype=float)


def tail_laplace_approx(query: TailQuery,
                        moments: SpectralMoments | None = None) -> ApproxResult:
    """Fully closed-form tail value from the Laplace expansion around the
    unique interior maximum of the mean."""
    r, rho = rho_diagnostic(query.kernel, query.domain)
    query, rescaled = _ensure_unit_curvature(query)
    d = query.domain.dim
    u = solve_u(query.b, query.sigma, d)
    if moments is None or rescaled:
        moments = spectral_moments(query.kernel)
    t_star = _locate_interior_max(query.mean, query.domain)
    hess_sig = np.atleast_2d(query.mean.hessian(t_star)) / query.sigma
    eigvals = np.linalg.eigvalsh(hess_sig)
    if float(np.max(eigvals)) >= -1e-12:
        raise NoInteriorMax(
            f"Hessian of the mean at t* = {np.round(t_star, 6)} is not negative "
            f"definite (eigenvalues {eigvals}); maximum is degenerate"
        )
    mu_sig_star = float(query.mean.evaluate(t_star)) / query.sigma
    log_h_star = float(
        _log_h_profile(moments, query.mean, query.sigma, t_star.reshape(1, -1))[0]
    )
    _, logdet = np.linalg.slogdet(hess_sig)
    log_prob = (
        0.5 * d * math.log(2 * math.pi)
        - 0.5 * logdet
        + log_h_star
        + (0.5 * d - 1.0) * math.log(u)
        - 0.5 * (u - mu_sig_star) ** 2
    )
    with np.errstate(over="ignore"):
        probability = float(np.exp(log_prob))
    return ApproxResult(
        probability=probability,
        clamped=min(probability, 1.0),
        u=u,
        method="laplace",
        quantity="integral",
        rho=rho,
        r=r,
        warnings=_diagnostic_warnings(rho, probability),
    )


def tail_count_approx(query: TailQuery, resolution=None,
                      moments: SpectralMoments | None = None) -> ApproxResult:
    """Tail of the doubly-stochastic count N(T): asymptotically identical to
    the exponential-integral tail, retagged as a count result."""
    result = tail_integral_approx(query, resolution=resolution, moments=moments)
    return dataclasses.replace(result, quantity="count")


def rho_diagnostic(kernel: CovarianceKernel, domain: Domain,
                   directions: int = 128) -> tuple[float, float]:
    """(r, rho): largest inscribed-ball radius of the box and the maximal
    correlation at that distance, rho = max_{|t| = r} C(t) / C(0)."""
    r = float(np.min(domain.widths)) / 2.0
    dirs = _direction_grid(kernel.dim, directions)
    c0 = float(kernel.at(np.zeros(kernel.dim)))
    vals = kernel.at(r * dirs) / c0
    return r, float(np.max(vals))
