import pathlib
import sys

import numpy as np
import pytest

SRC = pathlib.Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import grftail as gt  # noqa: E402


@pytest.fixture(scope="session")
def se1():
    return gt.squared_exponential(1)


@pytest.fixture(scope="session")
def se2():
    return gt.squared_exponential(2)


@pytest.fixture(scope="session")
def quadratic_mean1():
    return gt.MeanFunction.quadratic(0.25, 1)


@pytest.fixture(scope="session")
def study_query_factory(se1, quadratic_mean1):
    """TailQuery factory for the reference configuration
    C(t) = exp(-t^2/2), mu(t) = -t^2/4, sigma = 1."""

    def make(b, half_width=2.0):
        return gt.TailQuery(
            se1, quadratic_mean1, gt.Domain.symmetric(half_width, 1), 1.0, b
        )

    return make


def zero_kernel(dim: int) -> gt.CovarianceKernel:
    """Variance-0 stub: the sampled field is (numerically) identically zero."""
    return gt.CovarianceKernel(
        dim=dim,
        evaluate=lambda lags: np.zeros(np.asarray(lags).shape[:-1]),
        label="zero_stub",
    )
