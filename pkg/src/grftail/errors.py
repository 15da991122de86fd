"""Exception hierarchy for grftail.

Every failure mode that callers are expected to handle gets its own class;
generic ValueError/RuntimeError are reserved for programming errors.
"""


class GrfTailError(Exception):
    """Base class for all grftail errors."""


class NonPositiveDefinite(GrfTailError):
    """An assembled moment matrix failed a positive-definiteness check.

    Signals an invalid covariance kernel or finite-difference noise beyond
    the jitter budget.
    """


class DerivativeUnavailable(GrfTailError):
    """Finite differences of the kernel diverged across step refinements."""


class DegenerateHessian(GrfTailError):
    """The kernel's Hessian at the origin is not negative definite."""


class EmbeddingFailure(GrfTailError):
    """The node covariance matrix is not PSD even after maximum jitter."""


class NoRoot(GrfTailError):
    """The critical-level equation has no solution: the threshold lies below
    the asymptotic regime. Callers should fall back to Monte Carlo."""


class NoInteriorMax(GrfTailError):
    """The mean function has no unique interior maximum on the domain."""


class UnsupportedAnisotropy(GrfTailError):
    """Curvature normalization of the kernel is not axis-aligned, so it
    would map the box domain to a parallelepiped; normalize manually."""


class WeightOverflow(GrfTailError):
    """An importance-sampling log-weight exceeded floating-point range."""


class MixedProvenance(GrfTailError):
    """Estimator results from different (query, grid, kind) cannot be merged."""


class ConfigError(GrfTailError):
    """An experiment configuration failed schema validation."""
