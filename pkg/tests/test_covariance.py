"""Spectral moments, isotropization, and condition checks.

Analytic derivative tables of the Gaussian (squared-exponential) family are
verified against Richardson finite differences; non-analytic kernels are
verified against an independent test-local central-difference oracle.
"""

import itertools

import numpy as np
import pytest

import grftail as gt
from grftail.covariance import hessian_at_origin, second_derivative_pairs

FD_RTOL = 1e-6


def rational_quadratic(dim: int, alpha: float = 3.0) -> gt.CovarianceKernel:
    """C(t) = (1 + |t|^2/(2 alpha))^(-alpha): smooth, no analytic table.

    Taylor expansion at 0: 1 - |t|^2/2 + (1 + 1/alpha) |t|^4 / 8 + ..., so
    d2_ii C(0) = -1, d4_iiii C(0) = 3(1 + 1/alpha), d4_iijj C(0) = 1 + 1/alpha.
    """
    return gt.CovarianceKernel(
        dim=dim,
        evaluate=lambda lags: (1.0 + np.sum(np.asarray(lags) ** 2, axis=-1) / (2 * alpha))
        ** (-alpha),
        length_scale=1.0,
        label=f"rational_quadratic({alpha})",
    )


class TestSquaredExponentialMoments:
    def test_d1_analytic_taylor_values(self, se1):
        m = gt.spectral_moments(se1)
        np.testing.assert_allclose(m.mu20, [-1.0])
        np.testing.assert_allclose(m.mu22, [[3.0]])
        np.testing.assert_allclose(m.gamma, [[1.0, -1.0], [-1.0, 3.0]])
        assert m.quartic_diag_sum == 3.0
        np.testing.assert_allclose(m.one_vector, [1.0])

    def test_d2_product_form_values(self, se2):
        m = gt.spectral_moments(se2)
        np.testing.assert_allclose(m.mu20, [-1.0, -1.0, 0.0])
        np.testing.assert_allclose(
            m.mu22, [[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]]
        )
        assert m.quartic_diag_sum == 6.0
        np.testing.assert_allclose(m.one_vector, [1.0, 1.0, 0.0])

    @pytest.mark.parametrize("dim", [1, 2])
    def test_finite_difference_matches_analytic(self, dim):
        kernel = gt.squared_exponential(dim)
        analytic = gt.spectral_moments(kernel, method="analytic")
        fd = gt.spectral_moments(kernel, method="finite-difference")
        np.testing.assert_allclose(fd.mu20, analytic.mu20, rtol=FD_RTOL, atol=FD_RTOL)
        np.testing.assert_allclose(fd.mu22, analytic.mu22, rtol=FD_RTOL, atol=FD_RTOL)

    def test_finite_difference_matches_analytic_aniso(self):
        kernel = gt.gaussian_aniso([[1.0, 0.3], [0.3, 2.0]])
        analytic = gt.spectral_moments(kernel, method="analytic")
        fd = gt.spectral_moments(kernel, method="finite-difference")
        np.testing.assert_allclose(fd.mu22, analytic.mu22, rtol=FD_RTOL, atol=FD_RTOL)

    def test_gamma_cholesky_and_schur(self, se2):
        m = gt.spectral_moments(se2)
        np.linalg.cholesky(m.gamma)  # must not raise
        assert 0.0 < m.schur_complement <= 1.0

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_ordering_contract(self, d):
        pairs = second_derivative_pairs(d)
        assert pairs[:d] == [(i, i) for i in range(d)]
        off = [(i, j) for i in range(d) for j in range(i + 1, d)]
        assert pairs[d:] == off
        m = gt.spectral_moments(gt.squared_exponential(d))
        assert m.m == d * (d + 1) // 2
        np.testing.assert_array_equal(m.one_vector[:d], np.ones(d))
        np.testing.assert_array_equal(m.one_vector[d:], np.zeros(m.m - d))


class TestFiniteDifferenceOracle:
    """Library FD moments vs an independent Richardson oracle for a smooth
    kernel without an analytic table."""

    @staticmethod
    def _oracle_fourth(evaluate, dim, axes, h):
        """Tensor central stencil, steps h and h/2, Richardson-extrapolated."""
        stencils = {
            1: ((-1, -0.5), (1, 0.5)),
            2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
            3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
            4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
        }
        orders = {}
        for a in axes:
            orders[a] = orders.get(a, 0) + 1

        def estimate(step):
            total = 0.0
            axes_sorted = sorted(orders)
            for combo in itertools.product(*(stencils[orders[a]] for a in axes_sorted)):
                p = np.zeros(dim)
                coef = 1.0
                for a, (off, c) in zip(axes_sorted, combo):
                    p[a] = off * step
                    coef *= c
                total += coef * float(evaluate(p.reshape(1, -1))[0])
            return total / step ** len(axes)

        return (4.0 * estimate(h / 2) - estimate(h)) / 3.0

    @pytest.mark.parametrize("dim", [1, 2])
    def test_rational_quadratic_vs_oracle(self, dim):
        kernel = rational_quadratic(dim, alpha=3.0)
        m = gt.spectral_moments(kernel)
        pairs = second_derivative_pairs(dim)
        for a, (i, j) in enumerate(pairs):
            for b_, (k, l) in enumerate(pairs):
                oracle = self._oracle_fourth(kernel.evaluate, dim, (i, j, k, l), h=0.03)
                got = m.mu22[a, b_]
                assert got == pytest.approx(oracle, rel=FD_RTOL, abs=FD_RTOL)

    def test_rational_quadratic_taylor_anchor(self):
        m = gt.spectral_moments(rational_quadratic(1, alpha=3.0))
        assert m.mu20[0] == pytest.approx(-1.0, rel=1e-7)
        assert m.mu22[0, 0] == pytest.approx(4.0, rel=1e-6)  # 3 (1 + 1/3)

    def test_rational_quadratic_d2_anchors(self):
        m = gt.spectral_moments(rational_quadratic(2, alpha=3.0))
        expected = 4.0 / 3.0  # (1 + 1/alpha)
        assert m.mu22[0, 1] == pytest.approx(expected, rel=1e-6)
        assert m.mu22[2, 2] == pytest.approx(expected, rel=1e-6)

    def test_nonsmooth_kernel_raises(self):
        kernel = gt.CovarianceKernel(
            dim=1,
            evaluate=lambda lags: np.exp(-np.abs(np.asarray(lags)[..., 0])),
            label="exp_abs",
        )
        with pytest.raises(gt.DerivativeUnavailable):
            gt.spectral_moments(kernel)

    def test_indefinite_moments_raise(self):
        kernel = gt.CovarianceKernel(
            dim=1,
            evaluate=lambda lags: 1.0
            - 0.5 * np.asarray(lags)[..., 0] ** 2
            - np.asarray(lags)[..., 0] ** 4,
            label="negative_quartic",
        )
        with pytest.raises(gt.NonPositiveDefinite):
            gt.spectral_moments(kernel)


class TestIsotropize:
    def test_already_normalized_is_identity(self, se1):
        kernel, transform = gt.isotropize(se1)
        assert kernel is se1
        np.testing.assert_array_equal(transform, np.eye(1))

    def test_scalar_rescaling(self):
        # C(t) = exp(-2 t^2): Hessian -4, so lags shrink by 1/2
        kernel = gt.gaussian_aniso([[4.0]])
        normalized, transform = gt.isotropize(kernel)
        np.testing.assert_allclose(transform, [[0.5]], atol=1e-12)
        ts = np.linspace(-2, 2, 9).reshape(-1, 1)
        np.testing.assert_allclose(
            normalized.at(ts), np.exp(-ts[:, 0] ** 2 / 2), rtol=1e-12
        )
        assert hessian_at_origin(normalized)[0, 0] == pytest.approx(-1.0, abs=1e-8)

    def test_anisotropic_diagonal(self):
        kernel = gt.gaussian_aniso(np.diag([4.0, 1.0]))
        normalized, transform = gt.isotropize(kernel)
        np.testing.assert_allclose(transform, np.diag([0.5, 1.0]), atol=1e-12)
        H = hessian_at_origin(normalized)
        np.testing.assert_allclose(H, -np.eye(2), atol=1e-8)

    def test_idempotent(self):
        kernel = gt.gaussian_aniso([[2.0, 0.5], [0.5, 1.5]])
        normalized, _ = gt.isotropize(kernel)
        again, transform2 = gt.isotropize(normalized)
        np.testing.assert_allclose(transform2, np.eye(2), atol=1e-8)
        assert again is normalized

    def test_no_analytic_table_path(self):
        base = rational_quadratic(1)
        scaled = gt.CovarianceKernel(
            dim=1,
            evaluate=lambda lags: base.evaluate(2.0 * np.asarray(lags)),
            length_scale=0.5,
            label="rq_scaled",
        )
        normalized, transform = gt.isotropize(scaled)
        np.testing.assert_allclose(transform, [[0.5]], rtol=1e-7)
        np.testing.assert_allclose(hessian_at_origin(normalized), [[-1.0]], atol=1e-8)

    def test_degenerate_hessian(self):
        kernel = gt.CovarianceKernel(
            dim=1,
            evaluate=lambda lags: 1.0 + 0.5 * np.asarray(lags)[..., 0] ** 2,
            label="convex_at_zero",
        )
        with pytest.raises(gt.DegenerateHessian):
            gt.isotropize(kernel)


class TestCheckConditions:
    def test_study_configuration_passes(self, se1, quadratic_mean1):
        report = gt.check_conditions(se1, gt.Domain.symmetric(2.0, 1), quadratic_mean1)
        assert tuple(report.checks.keys()) == ("C1", "C2", "C3", "C4", "C5", "C6")
        assert report["C1"].status == "pass"
        assert report["C2"].status == "not-checked"
        assert report["C3"].status == "not-checked"
        assert report["C4"].status == "pass"
        assert report["C5"].status == "pass (sampled)"
        assert report["C6"].status == "pass"
        assert report.all_pass

    def test_boundary_maximum_fails_c6(self, se1, quadratic_mean1):
        report = gt.check_conditions(
            se1, gt.Domain.from_bounds([(0.0, 2.0)]), quadratic_mean1
        )
        assert report["C6"].status == "fail"
        assert not report.all_pass

    def test_oscillating_kernel_fails_c5(self, se1):
        kernel = gt.CovarianceKernel(
            dim=1,
            evaluate=lambda lags: np.cos(3.0 * np.asarray(lags)[..., 0])
            * np.exp(-np.asarray(lags)[..., 0] ** 2 / 2),
            label="oscillating",
        )
        report = gt.check_conditions(
            kernel, gt.Domain.symmetric(2.0, 1), gt.MeanFunction.constant(0.0, 1)
        )
        assert report["C5"].status == "fail"
        assert report["C5"].evidence is not None

    def test_constant_mean_c6_vacuous(self, se1):
        report = gt.check_conditions(
            se1, gt.Domain.symmetric(2.0, 1), gt.MeanFunction.constant(1.5, 1)
        )
        assert report["C6"].status == "pass"
        assert "constant" in report["C6"].message


class TestMeanFunctionDerivatives:
    """Analytic gradient/Hessian accessors agree with finite differences of
    the evaluator (relative error <= 1e-5 at probed points)."""

    @pytest.mark.parametrize(
        "mean, dim",
        [
            (gt.MeanFunction.quadratic(0.25, 2), 2),
            (
                gt.MeanFunction.linear_combo(
                    [
                        {"type": "intercept"},
                        {"type": "polynomial", "axis": 0, "degree": 1},
                        {"type": "harmonic", "axis": 0, "period": 12.0, "kind": "cos"},
                        {"type": "harmonic", "axis": 0, "period": 12.0, "kind": "sin"},
                    ],
                    [0.3, -0.1, 0.8, -0.4],
                    1,
                ),
                1,
            ),
        ],
    )
    def test_gradient_hessian_match_fd(self, mean, dim):
        bare = gt.MeanFunction.from_callable(
            lambda p: float(mean.evaluate_many(np.asarray(p).reshape(1, -1))[0]), dim
        )
        rng = np.random.default_rng(3)
        for _ in range(5):
            t = rng.uniform(-1.5, 1.5, size=dim)
            g_analytic = np.atleast_1d(mean.gradient(t))
            g_fd = np.atleast_1d(bare.gradient(t))
            np.testing.assert_allclose(g_analytic, g_fd, rtol=1e-5, atol=1e-5)
            h_analytic = np.atleast_2d(mean.hessian(t))
            h_fd = np.atleast_2d(bare.hessian(t))
            np.testing.assert_allclose(h_analytic, h_fd, rtol=1e-5, atol=1e-4)
