"""Gaussian field sampling on grids, the exponential integral, and the
conditional Poisson count.

Sampling is dense-Cholesky based: correctness first, performance second at
desk scale.  The factor is computed once per (kernel, grid) by GridSampler
and shared read-only across replications.
"""

import numpy as np

from .covariance import CovarianceKernel
from .domain import Grid, MeanFunction
from .errors import EmbeddingFailure

__all__ = [
    "FieldSample",
    "GridSampler",
    "simulate_grf",
    "simulate_grf_shifted",
    "exponential_integral",
    "sample_poisson_count",
]

# Relative jitter escalation for the node covariance factorization.
_JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


class FieldSample:
    """Field values on the nodes of a grid, tagged with their provenance."""

    __slots__ = ("values", "kind", "tau", "amplitude")

    def __init__(self, values: np.ndarray, kind: str = "centered",
                 tau: np.ndarray | None = None, amplitude: float | None = None):
        self.values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self.kind = kind
        self.tau = None if tau is None else np.asarray(tau, dtype=float)
        self.amplitude = amplitude

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        tag = self.kind
        if self.kind == "shifted":
            tag += f"(tau={self.tau}, amplitude={self.amplitude:g})"
        return f"FieldSample(n={len(self)}, {tag})"


class GridSampler:
    """Cholesky factor of the node covariance, reused across replications."""

    def __init__(self, kernel: CovarianceKernel, grid: Grid):
        if kernel.dim != grid.domain.dim:
            raise ValueError("kernel and grid dimensions differ")
        self.kernel = kernel
        self.grid = grid
        cov = kernel.matrix(grid.nodes)
        n = cov.shape[0]
        scale = float(np.mean(np.diag(cov))) or 1.0
        self.factor = None
        for jit in _JITTERS:
            try:
                self.factor = np.linalg.cholesky(cov + jit * abs(scale) * np.eye(n))
                self.jitter = jit
                break
            except np.linalg.LinAlgError:
                continue
        if self.factor is None:
            raise EmbeddingFailure(
                f"node covariance ({n} nodes) is not PSD even with relative jitter "
                f"{max(_JITTERS):g}; the grid is too fine for numeric precision "
                "or the kernel is not positive definite"
            )

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """One centered draw with the exact joint law N(0, C(t_i - t_j))."""
        return self.factor @ rng.standard_normal(len(self.grid.nodes))

    def draw_batch(self, z: np.ndarray) -> np.ndarray:
        """Centered draws from pre-generated standard normals z of shape (n, k)."""
        return self.factor @ z

    def shift_profile(self, tau, amplitude: float) -> np.ndarray:
        """Deterministic mean amplitude * C(node - tau); tau need not be a node."""
        tau = np.asarray(tau, dtype=float).reshape(-1)
        return amplitude * self.kernel.at(self.grid.nodes - tau[None, :])


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def simulate_grf(kernel: CovarianceKernel, grid: Grid, rng) -> FieldSample:
    """Sample the centered unit-variance field on the grid nodes."""
    sampler = GridSampler(kernel, grid)
    return FieldSample(sampler.draw(_as_generator(rng)), kind="centered")


def simulate_grf_shifted(kernel: CovarianceKernel, grid: Grid, tau, amplitude: float,
                         rng) -> FieldSample:
    """Sample the field with mean amplitude * C(t - tau) added.

    This is the conditioned-to-be-high law used by the importance sampler;
    the shift is evaluated analytically at the nodes, so tau may be any
    point of the domain.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if not grid.domain.contains(tau):
        raise ValueError(f"tau {tau} lies outside the domain")
    sampler = GridSampler(kernel, grid)
    values = sampler.draw(_as_generator(rng)) + sampler.shift_profile(tau, amplitude)
    return FieldSample(values, kind="shifted", tau=tau, amplitude=float(amplitude))


def exponential_integral(field, mean: MeanFunction, sigma: float, grid: Grid) -> float:
    """Midpoint-rule quadrature of exp(mu(t) + sigma f(t)) over the domain."""
    values = field.values if isinstance(field, FieldSample) else np.asarray(field, dtype=float)
    if values.size != grid.n_nodes:
        raise ValueError("field length does not match the grid")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mu = mean.evaluate_many(grid.nodes)
    return float(np.sum(np.exp(mu + sigma * values)) * grid.cell_volume)


def exponential_integral_batch(values: np.ndarray, mu_nodes: np.ndarray, sigma: float,
                               cell_volume: float) -> np.ndarray:
    """Vectorized quadrature for a (n_nodes, k) batch of field columns."""
    return np.sum(np.exp(mu_nodes[:, None] + sigma * values), axis=0) * cell_volume


def sample_poisson_count(intensity_integral: float, rng) -> int:
    """Draw the conditional count N(T) ~ Poisson(integral of the intensity)."""
    lam = float(intensity_integral)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"intensity must be finite and nonnegative, got {lam}")
    return int(_as_generator(rng).poisson(lam))
