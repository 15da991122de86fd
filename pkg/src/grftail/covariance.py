"""Stationary covariance kernels and their spectral moments.

The tail approximation needs the joint law of (f(0), d^2 f(0)), which is
determined by the kernel's derivatives at the origin: the vector of second
derivatives (one entry per second-derivative coordinate), the matrix of
fourth-order spectral moments, and the implied joint covariance matrix.
Kernels either carry an analytic derivative table or fall back to
Richardson-extrapolated central finite differences.

Index ordering contract (fixed globally, shared with the field sampler and
the tail constant): the m = d(d+1)/2 second-derivative coordinates are the
d diagonal entries (i,i) first, then the upper-triangle pairs (i,j), i<j,
in lexicographic order.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Domain, Grid, MeanFunction
from .errors import DegenerateHessian, DerivativeUnavailable, NonPositiveDefinite

__all__ = [
    "CovarianceKernel",
    "SpectralMoments",
    "ConditionCheck",
    "ConditionReport",
    "squared_exponential",
    "gaussian_aniso",
    "second_derivative_pairs",
    "spectral_moments",
    "isotropize",
    "check_conditions",
]

_EPS = np.finfo(float).eps

# Base finite-difference steps, in units of the kernel length scale.
# Second derivatives: eps^(1/6) balances the O(h^4) Richardson truncation
# against the eps/h^2 cancellation error.  Fourth derivatives divide by h^4,
# so the cancellation term forces a much larger step; 0.04 keeps both the
# truncation and the cancellation below ~1e-7 relative for unit-scale kernels.
_FD_STEP_SECOND = _EPS ** (1.0 / 6.0)
_FD_STEP_FOURTH = 0.04

# Allowed disagreement between successive Richardson extrapolants before the
# derivative is declared unavailable (divergent refinements).
_FD_CONSISTENCY_RTOL = 1e-3

# Relative jitter granted to Cholesky checks of assembled moment matrices:
# finite-difference moments carry O(1e-8) absolute noise.
_MOMENT_JITTERS = (0.0, 1e-12)

_CENTRAL_STENCILS = {
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
}


def second_derivative_pairs(d: int) -> list[tuple[int, int]]:
    """The global ordering of the m = d(d+1)/2 second-derivative coordinates."""
    return [(i, i) for i in range(d)] + [
        (i, j) for i in range(d) for j in range(i + 1, d)
    ]


@dataclass(frozen=True)
class CovarianceKernel:
    """A stationary correlation function C(t) on R^d.

    `evaluate` maps arrays of lag vectors (..., d) to correlation values;
    C(0) must be 1 (unit variance).  `second_derivative(i, j)` and
    `fourth_derivative(i, j, k, l)` are optional analytic accessors for
    derivatives of C at the origin; when absent, finite differences with
    step sizes proportional to `length_scale` are used.
    """

    dim: int
    evaluate: object = field(repr=False)
    second_derivative: object = field(default=None, repr=False)
    fourth_derivative: object = field(default=None, repr=False)
    length_scale: float = 1.0
    label: str = "custom"

    @property
    def derivative_source(self) -> str:
        if self.second_derivative is not None and self.fourth_derivative is not None:
            return "analytic"
        return "finite-difference"

    def at(self, lags) -> np.ndarray:
        """Evaluate at lag vectors of shape (..., d) (or scalars for d=1)."""
        arr = np.asarray(lags, dtype=float)
        if self.dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            arr = arr.reshape(arr.shape + (1,))
        if arr.shape[-1] != self.dim:
            raise ValueError(f"lag vectors must have last dimension {self.dim}")
        return np.asarray(self.evaluate(arr), dtype=float)

    def matrix(self, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        """Covariance matrix C(x_i - y_j) for point sets (n, d) and (m, d)."""
        x = np.asarray(x, dtype=float)
        y = x if y is None else np.asarray(y, dtype=float)
        return self.at(x[:, None, :] - y[None, :, :])


def squared_exponential(dim: int, length_scale: float = 1.0) -> CovarianceKernel:
    """C(t) = exp(-|t|^2 / (2 l^2)): the isotropic Gaussian kernel."""
    return gaussian_aniso(np.eye(dim) / float(length_scale) ** 2,
                          label=f"squared_exponential(l={float(length_scale)})")


def gaussian_aniso(scale_matrix, label: str | None = None) -> CovarianceKernel:
    """C(t) = exp(-t' S t / 2) for a symmetric positive definite S.

    This is the characteristic function of N(0, S), so its derivatives at 0
    are (signed) Gaussian moments: d2_{ij} C(0) = -S_ij and
    d4_{ijkl} C(0) = S_ij S_kl + S_ik S_jl + S_il S_jk.
    """
    S = np.asarray(scale_matrix, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("scale_matrix must be square")
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("scale_matrix must be symmetric")
    eigvals = np.linalg.eigvalsh(S)
    if np.min(eigvals) <= 0:
        raise ValueError("scale_matrix must be positive definite")
    dim = S.shape[0]

    def evaluate(lags):
        quad = np.einsum("...i,ij,...j->...", lags, S, lags)
        return np.exp(-0.5 * quad)

    def second(i, j):
        return -S[i, j]

    def fourth(i, j, k, l):
        return S[i, j] * S[k, l] + S[i, k] * S[j, l] + S[i, l] * S[j, k]

    return CovarianceKernel(
        dim=dim,
        evaluate=evaluate,
        second_derivative=second,
        fourth_derivative=fourth,
        length_scale=1.0 / math.sqrt(float(np.max(eigvals))),
        label=label or "gaussian_aniso",
    )


# ---------------------------------------------------------------------------
# Finite differences with Richardson extrapolation
# ---------------------------------------------------------------------------


def _stencil_estimate(kernel: CovarianceKernel, orders: dict[int, int], h: float) -> float:
    """Tensor-product central-difference estimate of a mixed partial at 0.

    `orders` maps axis -> derivative order along that axis (orders sum <= 4).
    Leading error is O(h^2).
    """
    items = sorted(orders.items())
    per_axis = [_CENTRAL_STENCILS[order] for _, order in items]
    pts = []
    coeffs = []
    for combo in itertools.product(*per_axis):
        p = np.zeros(kernel.dim)
        c = 1.0
        for (axis, _), (offset, coef) in zip(items, combo):
            p[axis] = offset * h
            c *= coef
        pts.append(p)
        coeffs.append(c)
    vals = kernel.at(np.asarray(pts))
    total_order = sum(orders.values())
    return float(np.asarray(coeffs) @ vals) / h ** total_order


def _richardson_derivative(kernel: CovarianceKernel, indices: tuple[int, ...],
                           base_step: float) -> float:
    """Richardson-extrapolated derivative d^{|indices|} C(0) with a
    divergence check across step refinements."""
    orders: dict[int, int] = {}
    for axis in indices:
        orders[axis] = orders.get(axis, 0) + 1
    h = base_step
    d1 = _stencil_estimate(kernel, orders, h)
    d2 = _stencil_estimate(kernel, orders, h / 2)
    d3 = _stencil_estimate(kernel, orders, h / 4)
    r1 = (4 * d2 - d1) / 3.0
    r2 = (4 * d3 - d2) / 3.0
    scale = max(abs(r1), abs(r2), 1.0)
    if not (math.isfinite(r1) and math.isfinite(r2)) or abs(r1 - r2) > _FD_CONSISTENCY_RTOL * scale:
        raise DerivativeUnavailable(
            f"finite differences for d^{len(indices)}C at axes {indices} diverge "
            f"across step refinements ({r1:.6g} vs {r2:.6g}); "
            "kernel is likely not smooth enough at the origin"
        )
    return r2


def _second_derivative(kernel: CovarianceKernel, i: int, j: int) -> float:
    if kernel.second_derivative is not None:
        return float(kernel.second_derivative(i, j))
    return _richardson_derivative(kernel, (i, j), _FD_STEP_SECOND * kernel.length_scale)


def _fourth_derivative(kernel: CovarianceKernel, i: int, j: int, k: int, l: int) -> float:
    if kernel.fourth_derivative is not None:
        return float(kernel.fourth_derivative(i, j, k, l))
    return _richardson_derivative(kernel, (i, j, k, l), _FD_STEP_FOURTH * kernel.length_scale)


def hessian_at_origin(kernel: CovarianceKernel) -> np.ndarray:
    """The d x d Hessian of C at 0 (analytic when available)."""
    d = kernel.dim
    H = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            H[i, j] = H[j, i] = _second_derivative(kernel, i, j)
    return H


# ---------------------------------------------------------------------------
# Spectral moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralMoments:
    """Derivative data of C at the origin, in the global pair ordering.

    mu20[k]   = d2_{p_k} C(0) for the k-th second-derivative pair p_k
    mu22[k,l] = d4_{p_k p_l} C(0)   (fourth-order spectral moments)
    gamma     = [[1, mu20], [mu20', mu22]]: the covariance of (f(0), d^2 f(0))
    quartic_diag_sum = sum_i d4_{iiii} C(0)
    one_vector = (1,...,1, 0,...,0) with d leading ones
    """

    d: int
    m: int
    mu20: np.ndarray
    mu22: np.ndarray
    gamma: np.ndarray
    quartic_diag_sum: float
    one_vector: np.ndarray

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return second_derivative_pairs(self.d)

    @property
    def schur_complement(self) -> float:
        """1 - mu20 mu22^{-1} mu20', in (0, 1] for a valid kernel."""
        return float(1.0 - self.mu20 @ np.linalg.solve(self.mu22, self.mu20))


def _cholesky_check(mat: np.ndarray, name: str) -> None:
    scale = float(np.mean(np.diag(mat))) or 1.0
    for jit in _MOMENT_JITTERS:
        try:
            np.linalg.cholesky(mat + jit * abs(scale) * np.eye(len(mat)))
            return
        except np.linalg.LinAlgError:
            continue
    raise NonPositiveDefinite(
        f"{name} is not positive definite (within relative jitter "
        f"{max(_MOMENT_JITTERS):g}); the kernel is invalid or finite-difference "
        "noise exceeds the jitter budget"
    )


def spectral_moments(kernel: CovarianceKernel, method: str = "auto") -> SpectralMoments:
    """Assemble the spectral-moment blocks of a (C4-normalized) kernel.

    method: "auto" uses the analytic table when the kernel has one,
    "analytic" requires it, "finite-difference" forces the Richardson path
    (useful for cross-validating an analytic table).
    """
    if method not in ("auto", "analytic", "finite-difference"):
        raise ValueError(f"unknown method {method!r}")
    if method == "analytic" and kernel.derivative_source != "analytic":
        raise DerivativeUnavailable("kernel has no analytic derivative table")
    use_analytic = method != "finite-difference" and kernel.derivative_source == "analytic"
    worker = kernel if use_analytic else CovarianceKernel(
        dim=kernel.dim,
        evaluate=kernel.evaluate,
        length_scale=kernel.length_scale,
        label=kernel.label,
    )

    d = worker.dim
    pairs = second_derivative_pairs(d)
    m = len(pairs)
    mu20 = np.array([_second_derivative(worker, i, j) for i, j in pairs])
    mu22 = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            i, j = pairs[a]
            k, l = pairs[b]
            mu22[a, b] = mu22[b, a] = _fourth_derivative(worker, i, j, k, l)
    gamma = np.empty((1 + m, 1 + m))
    gamma[0, 0] = 1.0
    gamma[0, 1:] = mu20
    gamma[1:, 0] = mu20
    gamma[1:, 1:] = mu22

    _cholesky_check(mu22, "mu22")
    _cholesky_check(gamma, "gamma")

    one = np.zeros(m)
    one[:d] = 1.0
    quartic_diag_sum = float(sum(mu22[a, a] for a in range(d)))

    for arr in (mu20, mu22, gamma, one):
        arr.setflags(write=False)
    moments = SpectralMoments(
        d=d, m=m, mu20=mu20, mu22=mu22, gamma=gamma,
        quartic_diag_sum=quartic_diag_sum, one_vector=one,
    )
    if not 0.0 < moments.schur_complement <= 1.0 + 1e-10:
        raise NonPositiveDefinite(
            f"Schur complement {moments.schur_complement:.6g} outside (0, 1]"
        )
    return moments


# ---------------------------------------------------------------------------
# Isotropization (affine normalization of the Hessian to -I)
# ---------------------------------------------------------------------------


def isotropize(kernel: CovarianceKernel, tol: float = 1e-8) -> tuple[CovarianceKernel, np.ndarray]:
    """Rescale lags so the returned kernel has Hessian -I at the origin.

    Returns (normalized_kernel, transform) where the new kernel is
    C'(t) = C(transform @ t) and transform is the symmetric inverse square
    root of -Hessian(C)(0).  Under this substitution a tail problem on
    domain T with mean mu maps to one on {s : transform s in T} with mean
    mu(transform s) and threshold b / det(transform).
    """
    d = kernel.dim
    H = hessian_at_origin(kernel)
    Sig = -H
    eigvals, eigvecs = np.linalg.eigh(Sig)
    if float(np.min(eigvals)) <= 0.0:
        raise DegenerateHessian(
            f"-Hessian of C at 0 has eigenvalues {eigvals}; not positive definite"
        )
    if float(np.max(np.abs(Sig - np.eye(d)))) <= 1e-10:
        return kernel, np.eye(d)

    T = eigvecs @ np.diag(eigvals ** -0.5) @ eigvecs.T  # Sig^{-1/2}, symmetric

    base_eval = kernel.evaluate

    def evaluate(lags):
        return base_eval(np.asarray(lags, dtype=float) @ T)

    second = fourth = None
    if kernel.derivative_source == "analytic":
        base2, base4 = kernel.second_derivative, kernel.fourth_derivative

        def second(i, j):
            total = 0.0
            for a in range(d):
                for b in range(d):
                    total += T[a, i] * T[b, j] * base2(a, b)
            return total

        def fourth(i, j, k, l):
            total = 0.0
            for a, bb, c, e in itertools.product(range(d), repeat=4):
                total += T[a, i] * T[bb, j] * T[c, k] * T[e, l] * base4(a, bb, c, e)
            return total

    normalized = CovarianceKernel(
        dim=d,
        evaluate=evaluate,
        second_derivative=second,
        fourth_derivative=fourth,
        length_scale=1.0,
        label=kernel.label + "|isotropized",
    )
    check = hessian_at_origin(
        CovarianceKernel(dim=d, evaluate=evaluate, length_scale=1.0)
    )
    deviation = float(np.max(np.abs(check + np.eye(d))))
    if deviation > tol:
        raise DegenerateHessian(
            f"normalized kernel Hessian deviates from -I by {deviation:.3g} (> {tol:g})"
        )
    return normalized, T


# ---------------------------------------------------------------------------
# Regularity-condition report
# ---------------------------------------------------------------------------

_CONDITIONS = ("C1", "C2", "C3", "C4", "C5", "C6")


@dataclass(frozen=True)
class ConditionCheck:
    status: str  # "pass" | "pass (sampled)" | "fail" | "not-checked"
    message: str
    evidence: float | None = None


@dataclass(frozen=True)
class ConditionReport:
    checks: dict

    def __post_init__(self):
        if tuple(self.checks.keys()) != _CONDITIONS:
            raise ValueError("report must list conditions C1..C6 exactly once")

    def __getitem__(self, name: str) -> ConditionCheck:
        return self.checks[name]

    @property
    def all_pass(self) -> bool:
        return all(c.status != "fail" for c in self.checks.values())

    def summary(self) -> str:
        return "\n".join(
            f"{name}: {c.status} - {c.message}" for name, c in self.checks.items()
        )


def _direction_grid(d: int, n: int) -> np.ndarray:
    """Deterministic set of unit directions in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        angles = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    if d == 3:
        # Fibonacci sphere
        k = np.arange(n) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / n)
        theta = np.pi * (1.0 + math.sqrt(5.0)) * k
        return np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=-1,
        )
    rng = np.random.default_rng(12345)
    dirs = rng.standard_normal((n, d))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def check_conditions(kernel: CovarianceKernel, domain: Domain, mean: MeanFunction,
                     directions: int = 64, radial_points: int = 128,
                     argmax_resolution: int = 64) -> ConditionReport:
    """Probe the regularity conditions; failures are reported, not raised.

    C1 unit variance at the origin; C4 Hessian -I; C5 radial monotonicity of
    C along a sampled direction grid (a partial check of a global condition,
    hence "pass (sampled)"); C6 interior argmax of the mean.  Smoothness
    (C2) and the box-domain geometry (C3) are declared, not verified.
    """
    checks: dict[str, ConditionCheck] = {}

    c0 = float(kernel.at(np.zeros(kernel.dim)))
    if abs(c0 - 1.0) <= 1e-10:
        checks["C1"] = ConditionCheck("pass", f"C(0) = {c0:.12g}", c0)
    else:
        checks["C1"] = ConditionCheck("fail", f"C(0) = {c0:.12g}, expected 1", c0)

    checks["C2"] = ConditionCheck("not-checked", "smoothness is declared, not verified")
    checks["C3"] = ConditionCheck("not-checked", "box domains are piecewise smooth by construction")

    try:
        H = hessian_at_origin(kernel)
        dev = float(np.max(np.abs(H + np.eye(kernel.dim))))
        if dev <= 1e-8:
            checks["C4"] = ConditionCheck("pass", f"Hessian(C)(0) = -I to {dev:.2e}", dev)
        else:
            checks["C4"] = ConditionCheck(
                "fail", f"Hessian(C)(0) deviates from -I by {dev:.3g}; isotropize first", dev
            )
    except DerivativeUnavailable as exc:
        checks["C4"] = ConditionCheck("fail", f"Hessian unavailable: {exc}")

    dirs = _direction_grid(kernel.dim, directions)
    radii = np.linspace(0.0, domain.diameter, radial_points + 1)
    pts = radii[None, :, None] * dirs[:, None, :]
    vals = kernel.at(pts.reshape(-1, kernel.dim)).reshape(len(dirs), -1)
    increases = np.diff(vals, axis=1) > 1e-12
    if increases.any():
        di, ri = np.argwhere(increases)[0]
        checks["C5"] = ConditionCheck(
            "fail",
            f"C increases along direction {np.round(dirs[di], 4)} near radius "
            f"{radii[ri + 1]:.4g}",
            float(radii[ri + 1]),
        )
    else:
        checks["C5"] = ConditionCheck(
            "pass (sampled)",
            f"non-increasing along {len(dirs)} directions x {radial_points} radii",
        )

    grid = Grid.regular(domain, argmax_resolution)
    mu = mean.evaluate_many(grid.nodes)
    span = float(np.max(mu) - np.min(mu))
    if span <= 1e-12 * (1.0 + float(np.max(np.abs(mu)))):
        checks["C6"] = ConditionCheck("pass", "mean is constant; condition is vacuous")
    else:
        idx = np.unravel_index(int(np.argmax(mu)), grid.shape)
        on_boundary = any(i == 0 or i == n - 1 for i, n in zip(idx, grid.shape))
        argmax_point = grid.nodes[int(np.argmax(mu))]
        if on_boundary:
            checks["C6"] = ConditionCheck(
                "fail", f"mean argmax near {np.round(argmax_point, 4)} lies on the boundary"
            )
        else:
            checks["C6"] = ConditionCheck(
                "pass", f"mean argmax near {np.round(argmax_point, 4)} is interior"
            )

    return ConditionReport(checks=checks)
