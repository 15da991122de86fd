"""Box domains, midpoint grids, and mean functions.

Domains are restricted to products of intervals: every computation in scope
(including the bundled study presets) lives on a box, and boxes keep
the quadrature, the inscribed-ball diagnostic, and uniform sampling exact.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Domain", "Grid", "MeanFunction"]

# Step sizes for the fallback finite-difference accessors of MeanFunction.
# First derivatives tolerate a smaller step than second derivatives.
_FD_GRAD_STEP = 1e-5
_FD_HESS_STEP = 1e-4


def _as_points(t, dim: int) -> np.ndarray:
    """Normalize input to an (n, dim) float array; scalars allowed for dim=1."""
    arr = np.asarray(t, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim == 1 and (arr.ndim == 1 or arr.shape[-1] != 1):
        arr = arr.reshape(-1, 1)
    else:
        arr = arr.reshape(-1, arr.shape[-1])
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points in R^{dim}, got shape {np.shape(t)}")
    return arr


@dataclass(frozen=True)
class Domain:
    """A product box  T = [a_1,b_1] x ... x [a_d,b_d]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be equal-length, nonempty")
        for a, b in zip(self.lower, self.upper):
            if not (math.isfinite(a) and math.isfinite(b) and b > a):
                raise ValueError(f"invalid interval [{a}, {b}]")

    @classmethod
    def from_bounds(cls, bounds) -> "Domain":
        """Build from a sequence of (a_i, b_i) pairs."""
        bounds = [(float(a), float(b)) for a, b in bounds]
        return cls(tuple(a for a, _ in bounds), tuple(b for _, b in bounds))

    @classmethod
    def symmetric(cls, half_width: float, dim: int) -> "Domain":
        """The cube [-half_width, half_width]^dim."""
        return cls((-float(half_width),) * dim, (float(half_width),) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def measure(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float).reshape(-1)
        if p.size != self.dim:
            return False
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lower, self.upper))


@dataclass(frozen=True)
class Grid:
    """Uniform midpoint grid over a box domain.

    Nodes are cell midpoints, so no node touches the boundary and the
    midpoint quadrature weights are simply the (equal) cell volumes.
    """

    domain: Domain
    shape: tuple[int, ...]
    nodes: np.ndarray = field(repr=False, compare=False)
    cell_volume: float = field(compare=False)

    @classmethod
    def regular(cls, domain: Domain, resolution) -> "Grid":
        if np.isscalar(resolution):
            shape = (int(resolution),) * domain.dim
        else:
            shape = tuple(int(n) for n in resolution)
        if len(shape) != domain.dim or any(n < 1 for n in shape):
            raise ValueError(f"bad grid resolution {resolution} for dim {domain.dim}")
        axes = []
        for a, b, n in zip(domain.lower, domain.upper, shape):
            h = (b - a) / n
            axes.append(a + h * (np.arange(n) + 0.5))
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        nodes.setflags(write=False)
        cell_volume = float(np.prod([(b - a) / n for a, b, n in zip(domain.lower, domain.upper, shape)]))
        return cls(domain=domain, shape=shape, nodes=nodes, cell_volume=cell_volume)

    @classmethod
    def for_kernel(cls, domain: Domain, length_scale: float = 1.0, nodes_per_length: int = 8) -> "Grid":
        """Default resolution: at least `nodes_per_length` nodes per unit
        correlation length per axis."""
        shape = tuple(
            max(2, math.ceil(nodes_per_length * w / length_scale)) for w in domain.widths
        )
        return cls.regular(domain, shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))


class MeanFunction:
    """Deterministic mean of the log-intensity, with derivative access.

    Wraps a vectorized evaluator plus optional analytic gradient/Hessian;
    missing derivatives fall back to central finite differences of the
    evaluator.
    """

    def __init__(self, dim: int, evaluate, gradient=None, hessian=None,
                 label: str = "custom", vectorized: bool = True):
        self.dim = int(dim)
        self.label = label
        self._evaluate = evaluate if vectorized else self._vectorize_scalar(evaluate)
        self._gradient = gradient
        self._hessian = hessian
        self._vectorized_derivs = vectorized

    @staticmethod
    def _vectorize_scalar(fn):
        def wrapped(pts):
            return np.array([fn(p) for p in pts], dtype=float)
        return wrapped

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, value: float, dim: int) -> "MeanFunction":
        value = float(value)
        return cls(
            dim,
            evaluate=lambda pts: np.full(len(pts), value),
            gradient=lambda pts: np.zeros((len(pts), dim)),
            hessian=lambda pts: np.zeros((len(pts), dim, dim)),
            label=f"constant({value})",
        )

    @classmethod
    def quadratic(cls, coefficient: float, dim: int) -> "MeanFunction":
        """mu(t) = -coefficient * |t|^2."""
        c = float(coefficient)
        eye = np.eye(dim)
        return cls(
            dim,
            evaluate=lambda pts: -c * np.sum(pts ** 2, axis=-1),
            gradient=lambda pts: -2.0 * c * pts,
            hessian=lambda pts: np.broadcast_to(-2.0 * c * eye, (len(pts), dim, dim)).copy(),
            label=f"quadratic({c})",
        )

    @classmethod
    def linear_combo(cls, terms, beta, dim: int) -> "MeanFunction":
        """mu(t) = sum_i beta_i * x_i(t) for covariate terms x_i.

        Supported terms (dicts):
          {"type": "intercept"}
          {"type": "polynomial", "axis": j, "degree": k}      -> t_j^k
          {"type": "harmonic", "axis": j, "period": p,
           "kind": "cos"|"sin"}                               -> cos/sin(2 pi t_j / p)
        """
        beta = np.asarray(beta, dtype=float)
        terms = [dict(term) for term in terms]
        if len(terms) != beta.size:
            raise ValueError("beta length must match the number of covariate terms")
        funcs = [_covariate(term, dim) for term in terms]

        def evaluate(pts):
            out = np.zeros(len(pts))
            for b, (val, _, _) in zip(beta, funcs):
                out += b * val(pts)
            return out

        def gradient(pts):
            out = np.zeros((len(pts), dim))
            for b, (_, grad, _) in zip(beta, funcs):
                out += b * grad(pts)
            return out

        def hessian(pts):
            out = np.zeros((len(pts), dim, dim))
            for b, (_, _, hess) in zip(beta, funcs):
                out += b * hess(pts)
            return out

        return cls(dim, evaluate, gradient, hessian, label="linear_combo")

    @classmethod
    def from_callable(cls, fn, dim: int, gradient=None, hessian=None,
                      label: str = "custom", vectorized: bool = False) -> "MeanFunction":
        return cls(dim, fn, gradient, hessian, label=label, vectorized=vectorized)

    # -- evaluation --------------------------------------------------------

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        pts = _as_points(t, self.dim)
        vals = np.asarray(self._evaluate(pts), dtype=float)
        if np.isscalar(t) or np.asarray(t).ndim <= 1:
            return float(vals[0]) if vals.size == 1 else vals
        return vals

    def evaluate_many(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self._evaluate(_as_points(pts, self.dim)), dtype=float)

    def gradient(self, t) -> np.ndarray:
        pts = _as_points(t, self.dim)
        if self._gradient is not None:
            out = np.asarray(self._gradient(pts), dtype=float)
        else:
            out = np.stack([self._fd_gradient(p) for p in pts])
        return out[0] if pts.shape[0] == 1 and np.asarray(t).ndim <= 1 else out

    def hessian(self, t) -> np.ndarray:
        pts = _as_points(t, self.dim)
        if self._hessian is not None:
            out = np.asarray(self._hessian(pts), dtype=float)
        else:
            out = np.stack([self._fd_hessian(p) for p in pts])
        return out[0] if pts.shape[0] == 1 and np.asarray(t).ndim <= 1 else out

    def gradient_many(self, pts: np.ndarray) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        if self._gradient is not None:
            return np.asarray(self._gradient(pts), dtype=float)
        return np.stack([self._fd_gradient(p) for p in pts])

    def hessian_many(self, pts: np.ndarray) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        if self._hessian is not None:
            return np.asarray(self._hessian(pts), dtype=float)
        return np.stack([self._fd_hessian(p) for p in pts])

    # -- finite-difference fallbacks ----------------------------------------

    def _point_value(self, p: np.ndarray) -> float:
        return float(self._evaluate(p.reshape(1, -1))[0])

    def _fd_gradient(self, p: np.ndarray) -> np.ndarray:
        g = np.empty(self.dim)
        for i in range(self.dim):
            h = _FD_GRAD_STEP * (1.0 + abs(p[i]))
            e = np.zeros(self.dim)
            e[i] = h
            g[i] = (self._point_value(p + e) - self._point_value(p - e)) / (2 * h)
        return g

    def _fd_hessian(self, p: np.ndarray) -> np.ndarray:
        H = np.empty((self.dim, self.dim))
        steps = [_FD_HESS_STEP * (1.0 + abs(p[i])) for i in range(self.dim)]
        f0 = self._point_value(p)
        for i in range(self.dim):
            ei = np.zeros(self.dim)
            ei[i] = steps[i]
            H[i, i] = (
                self._point_value(p + ei) - 2 * f0 + self._point_value(p - ei)
            ) / steps[i] ** 2
            for j in range(i + 1, self.dim):
                ej = np.zeros(self.dim)
                ej[j] = steps[j]
                H[i, j] = H[j, i] = (
                    self._point_value(p + ei + ej)
                    - self._point_value(p + ei - ej)
                    - self._point_value(p - ei + ej)
                    + self._point_value(p - ei - ej)
                ) / (4 * steps[i] * steps[j])
        return H


def _covariate(term: dict, dim: int):
    """(value, gradient, hessian) triple for one covariate term."""
    kind = term.get("type")
    if kind == "intercept":
        return (
            lambda pts: np.ones(len(pts)),
            lambda pts: np.zeros((len(pts), dim)),
            lambda pts: np.zeros((len(pts), dim, dim)),
        )
    axis = int(term.get("axis", 0))
    if not 0 <= axis < dim:
        raise ValueError(f"covariate axis {axis} out of range for dim {dim}")
    if kind == "polynomial":
        k = int(term["degree"])
        if k < 0:
            raise ValueError("polynomial degree must be >= 0")

        def value(pts):
            return pts[:, axis] ** k

        def grad(pts):
            out = np.zeros((len(pts), dim))
            if k >= 1:
                out[:, axis] = k * pts[:, axis] ** (k - 1)
            return out

        def hess(pts):
            out = np.zeros((len(pts), dim, dim))
            if k >= 2:
                out[:, axis, axis] = k * (k - 1) * pts[:, axis] ** (k - 2)
            return out

        return value, grad, hess
    if kind == "harmonic":
        period = float(term["period"])
        if period <= 0:
            raise ValueError("harmonic period must be > 0")
        omega = 2.0 * math.pi / period
        trig, dtrig = (np.cos, lambda x: -np.sin(x)) if term.get("kind", "cos") == "cos" else (np.sin, np.cos)

        def value(pts):
            return trig(omega * pts[:, axis])

        def grad(pts):
            out = np.zeros((len(pts), dim))
            out[:, axis] = omega * dtrig(omega * pts[:, axis])
            return out

        def hess(pts):
            out = np.zeros((len(pts), dim, dim))
            out[:, axis, axis] = -(omega ** 2) * trig(omega * pts[:, axis])
            return out

        return value, grad, hess
    raise ValueError(f"unknown covariate term type {kind!r}")
