"""Critical-level equation, the H constant, and the tail approximations."""

import math

import numpy as np
import pytest

import grftail as gt
from grftail.tail_approx import _locate_interior_max

# Monte Carlo integration oracle for the z-integral inside H: importance
# sample from N(0, mu22), whose density cancels the quadratic part of the
# integrand analytically.  Independent of the completing-the-square path.


def z_integral_mc_oracle(moments, sigma, n, rng):
    L = np.linalg.cholesky(moments.mu22)
    z = rng.standard_normal((n, moments.m)) @ L.T
    a = np.linalg.solve(moments.mu22, moments.mu20)
    s = moments.schur_complement
    one = moments.one_vector
    const = float(one @ moments.mu22 @ one) / (8.0 * sigma ** 2)
    log_ratio = (
        0.5 * moments.m * math.log(2 * math.pi)
        + 0.5 * np.linalg.slogdet(moments.mu22)[1]
        - 0.5 * (z @ a) ** 2 / s
        + (z @ one) / (2.0 * sigma)
        - const
    )
    vals = np.exp(log_ratio)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n))


class TestSolveU:
    def test_trivial_root_d1(self):
        u = gt.solve_u(math.sqrt(2 * math.pi) * math.e, 1.0, 1)
        assert abs(u - 1.0) <= 1e-12

    def test_trivial_root_d2(self):
        u = gt.solve_u(math.pi * math.e ** 2, 1.0, 2)
        assert abs(u - 2.0) <= 1e-12

    def test_no_root_below_minimum(self):
        # min g = g(1/2) = 2 sqrt(pi) e^{1/2} ~ 5.845 > 5
        with pytest.raises(gt.NoRoot):
            gt.solve_u(5.0, 1.0, 1)

    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_residual_property(self, d, sigma):
        b_min = gt.threshold_function(d / (2 * sigma), sigma, d)
        bs = np.geomspace(b_min * 1.5, b_min * 1e8, 50)
        us = [gt.solve_u(b, sigma, d) for b in bs]
        for b, u in zip(bs, us):
            assert u >= d / (2 * sigma)
            assert abs(gt.threshold_function(u, sigma, d) - b) <= 1e-12 * b
        assert all(u2 > u1 for u1, u2 in zip(us, us[1:]))  # strictly increasing

    def test_large_b_bracket_growth(self):
        # upper bracket must expand for very large thresholds at small sigma
        u = gt.solve_u(1e30, 0.5, 1)
        b = gt.threshold_function(u, 0.5, 1)
        assert abs(b - 1e30) <= 1e-12 * 1e30

    def test_returns_larger_root(self):
        u = gt.solve_u(20.0, 1.0, 1)
        assert u > 0.5  # beyond the minimum of g


class TestHConstant:
    def test_constant_mean_t_independent(self, se1):
        moments = gt.spectral_moments(se1)
        mean = gt.MeanFunction.constant(0.7, 1)
        h1 = gt.h_constant(moments, mean, 1.3, [0.2])
        h2 = gt.h_constant(moments, mean, 1.3, [-1.4])
        assert h1 == pytest.approx(h2, rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2])
    def test_closed_form_determinant_identity(self, d):
        # completing the square must reproduce the analytic simplification
        # Z = (2 pi)^{m/2} |Gamma|^{1/2} exp(-(mu20 . one)^2 / (8 sigma^2))
        moments = gt.spectral_moments(gt.squared_exponential(d))
        for sigma in (0.5, 1.0, 2.0):
            z = gt.z_integral_closed_form(moments, sigma)
            analytic = (
                (2 * math.pi) ** (moments.m / 2)
                * math.sqrt(np.linalg.det(moments.gamma))
                * math.exp(-float(moments.mu20 @ moments.one_vector) ** 2 / (8 * sigma ** 2))
            )
            assert z == pytest.approx(analytic, rel=1e-12)

    def test_z_integral_vs_mc_oracle_d1(self, se1):
        moments = gt.spectral_moments(se1)
        est, se = z_integral_mc_oracle(moments, 1.0, 10 ** 6, np.random.default_rng(31))
        closed = gt.z_integral_closed_form(moments, 1.0)
        assert abs(closed - est) <= 3.0 * se

    def test_full_h_vs_mc_oracle_d2_quadratic_mean(self, se2):
        moments = gt.spectral_moments(se2)
        mean = gt.MeanFunction.quadratic(0.25, 2)
        sigma = 1.0
        z_est, z_se = z_integral_mc_oracle(moments, sigma, 10 ** 6, np.random.default_rng(32))
        # independent prefactor: |Gamma|^{-1/2} (2 pi)^{-(d+1)(d+2)/4}
        #   exp{(1'mu22 1 + sum d4_iiii)/(8 s^2) + (d mu_s + tr Hess mu_s)/(2 s) + |grad mu_s|^2}
        t = np.zeros(2)
        mu_s = float(mean.evaluate(t)) / sigma
        tr_hess = float(np.trace(np.atleast_2d(mean.hessian(t)))) / sigma
        grad = np.atleast_1d(mean.gradient(t)) / sigma
        quartic = float(moments.one_vector @ moments.mu22 @ moments.one_vector)
        prefactor = (
            np.linalg.det(moments.gamma) ** -0.5
            * (2 * math.pi) ** (-(2 + 1) * (2 + 2) / 4)
            * math.exp(
                (quartic + moments.quartic_diag_sum) / (8 * sigma ** 2)
                + (2 * mu_s + tr_hess) / (2 * sigma)
                + float(grad @ grad)
            )
        )
        h_closed = gt.h_constant(moments, mean, sigma, t)
        assert abs(h_closed - prefactor * z_est) <= 3.0 * prefactor * z_se


class TestTailIntegralApprox:
    def test_strictly_decreasing_in_b(self, study_query_factory):
        bs = np.geomspace(14.0, 90.0, 10)
        probs = [gt.tail_integral_approx(study_query_factory(b)).probability for b in bs]
        assert all(p1 > p2 for p1, p2 in zip(probs, probs[1:]))

    def test_translation_invariance(self, se1):
        b = 25.0
        centered = gt.TailQuery(
            se1, gt.MeanFunction.quadratic(0.25, 1), gt.Domain.symmetric(2.0, 1), 1.0, b
        )
        shifted_mean = gt.MeanFunction(
            1,
            evaluate=lambda pts: -0.25 * (pts[:, 0] - 2.0) ** 2,
            gradient=lambda pts: (-0.5 * (pts[:, 0] - 2.0))[:, None],
            hessian=lambda pts: np.full((len(pts), 1, 1), -0.5),
            label="shifted_quadratic",
        )
        shifted = gt.TailQuery(
            se1, shifted_mean, gt.Domain.from_bounds([(0.0, 4.0)]), 1.0, b
        )
        p0 = gt.tail_integral_approx(centered).probability
        p1 = gt.tail_integral_approx(shifted).probability
        assert p1 == pytest.approx(p0, rel=1e-10)

    def test_small_domain_warning(self, se1, quadratic_mean1):
        q = gt.TailQuery(se1, quadratic_mean1, gt.Domain.symmetric(1.0, 1), 1.0, 25.0)
        res = gt.tail_integral_approx(q)
        assert res.rho == pytest.approx(math.exp(-0.5), rel=1e-6)
        assert "small_domain" in res.warnings

    def test_small_b_reports_raw_and_clamped(self, se1):
        # barely above min g ~ 5.845: the raw asymptotic value exceeds 1
        q = gt.TailQuery(
            se1, gt.MeanFunction.constant(0.0, 1), gt.Domain.symmetric(3.0, 1), 1.0, 5.9
        )
        res = gt.tail_integral_approx(q)
        assert res.probability > 1.0
        assert res.clamped == 1.0
        assert "small_b_regime" in res.warnings

    def test_no_root_propagates(self, study_query_factory):
        with pytest.raises(gt.NoRoot):
            gt.tail_integral_approx(study_query_factory(5.0))

    def test_non_unit_curvature_auto_normalized(self, study_query_factory):
        # C(t) = exp(-t^2/8) on [-4,4] with mu = -t^2/16 and threshold b is
        # the reference problem on [-2,2] with threshold b/2 after the lag
        # substitution t -> 2s
        b = 50.0
        wide = gt.TailQuery(
            gt.squared_exponential(1, length_scale=2.0),
            gt.MeanFunction.quadratic(1.0 / 16.0, 1),
            gt.Domain.symmetric(4.0, 1),
            1.0,
            b,
        )
        reference = study_query_factory(b / 2.0)
        p_wide = gt.tail_integral_approx(wide).probability
        p_ref = gt.tail_integral_approx(reference).probability
        assert p_wide == pytest.approx(p_ref, rel=1e-9)

    def test_rotated_anisotropy_rejected(self):
        kernel = gt.gaussian_aniso([[1.0, 0.4], [0.4, 2.0]])
        q = gt.TailQuery(
            kernel, gt.MeanFunction.quadratic(0.25, 2), gt.Domain.symmetric(2.0, 2),
            1.0, 40.0,
        )
        with pytest.raises(gt.UnsupportedAnisotropy, match="axis-aligned"):
            gt.tail_integral_approx(q)

    def test_diagonal_anisotropy_normalized(self):
        # axis-aligned rescaling keeps the box a box and is applied in place
        kernel = gt.gaussian_aniso(np.diag([4.0, 1.0]))
        q = gt.TailQuery(
            kernel, gt.MeanFunction.constant(0.0, 2), gt.Domain.symmetric(2.0, 2),
            1.0, 60.0,
        )
        res = gt.tail_integral_approx(q)
        # equivalent normalized problem: unit kernel on [-4,4] x [-2,2], b * 2
        ref = gt.TailQuery(
            gt.squared_exponential(2),
            gt.MeanFunction.constant(0.0, 2),
            gt.Domain.from_bounds([(-4.0, 4.0), (-2.0, 2.0)]),
            1.0,
            120.0,
        )
        assert res.probability == pytest.approx(
            gt.tail_integral_approx(ref).probability, rel=1e-9
        )


class TestTailLaplaceApprox:
    def test_quadratic_mean_maximizer_and_hessian(self, quadratic_mean1):
        t_star = _locate_interior_max(quadratic_mean1, gt.Domain.symmetric(2.0, 1))
        assert abs(t_star[0]) <= 1e-8
        sigma = 1.7
        hess_sig = float(np.atleast_2d(quadratic_mean1.hessian(t_star))[0, 0]) / sigma
        assert hess_sig == pytest.approx(-0.5 / sigma, rel=1e-12)

    @pytest.mark.parametrize("u_target, tol", [(6.0, 0.15), (8.0, 0.12), (10.0, 0.10)])
    def test_agrees_with_quadrature_at_large_u(self, study_query_factory, u_target, tol):
        b = gt.threshold_function(u_target, 1.0, 1)
        q = study_query_factory(b)
        quad = gt.tail_integral_approx(q).probability
        laplace = gt.tail_laplace_approx(q).probability
        assert laplace / quad == pytest.approx(1.0, abs=tol)

    def test_constant_mean_raises(self, se1):
        q = gt.TailQuery(
            se1, gt.MeanFunction.constant(0.0, 1), gt.Domain.symmetric(2.0, 1), 1.0, 25.0
        )
        with pytest.raises(gt.NoInteriorMax):
            gt.tail_laplace_approx(q)

    def test_boundary_max_raises(self, se1, quadratic_mean1):
        q = gt.TailQuery(
            se1, quadratic_mean1, gt.Domain.from_bounds([(0.5, 2.0)]), 1.0, 25.0
        )
        with pytest.raises(gt.NoInteriorMax):
            gt.tail_laplace_approx(q)

    def test_tied_maxima_raise(self, se1):
        double_bump = gt.MeanFunction(
            1,
            evaluate=lambda pts: -0.25 * (pts[:, 0] ** 2 - 1.0) ** 2,
            label="double_bump",
        )
        q = gt.TailQuery(se1, double_bump, gt.Domain.symmetric(2.0, 1), 1.0, 25.0)
        with pytest.raises(gt.NoInteriorMax):
            gt.tail_laplace_approx(q)

    def test_method_tag(self, study_query_factory):
        res = gt.tail_laplace_approx(study_query_factory(25.0))
        assert res.method == "laplace"


class TestTailCountApprox:
    def test_matches_two_layer_mc_at_moderate_tail(self, study_query_factory):
        # p ~ 1e-2: the count approximation tracks the two-layer estimator
        q = study_query_factory(25.0)
        grid = gt.Grid.for_kernel(q.domain, 1.0)
        approx = gt.tail_count_approx(q)
        mc = gt.count_tail_mc(q, grid, 20_000, seed=70)
        assert abs(approx.probability - mc.estimate) <= 3.0 * mc.std_error

    def test_identical_to_integral_approx(self, study_query_factory):
        q = study_query_factory(25.0)
        integral = gt.tail_integral_approx(q)
        count = gt.tail_count_approx(q)
        assert count.probability == integral.probability
        assert count.u == integral.u
        assert count.quantity == "count"

    def test_no_root_shared(self, study_query_factory):
        with pytest.raises(gt.NoRoot):
            gt.tail_count_approx(study_query_factory(5.0))


class TestRhoDiagnostic:
    def test_reference_values_d1(self, se1):
        r, rho = gt.rho_diagnostic(se1, gt.Domain.symmetric(1.0, 1))
        assert (r, rho) == pytest.approx((1.0, math.exp(-0.5)), rel=1e-9)
        r, rho = gt.rho_diagnostic(se1, gt.Domain.symmetric(2.0, 1))
        assert (r, rho) == pytest.approx((2.0, math.exp(-2.0)), rel=1e-9)
        r, rho = gt.rho_diagnostic(se1, gt.Domain.symmetric(3.0, 1))
        assert (r, rho) == pytest.approx((3.0, math.exp(-4.5)), rel=1e-9)

    def test_square_domain_d2(self, se2):
        r, rho = gt.rho_diagnostic(se2, gt.Domain.symmetric(1.0, 2))
        assert (r, rho) == pytest.approx((1.0, math.exp(-0.5)), rel=1e-9)

    def test_anisotropic_direction_scan(self):
        kernel = gt.gaussian_aniso(np.diag([4.0, 1.0]))
        dom = gt.Domain.symmetric(1.0, 2)
        r, rho = gt.rho_diagnostic(kernel, dom)
        assert r == 1.0
        # slowest decay is along the second axis: C(0, 1) = exp(-1/2)
        assert rho == pytest.approx(math.exp(-0.5), rel=1e-4)
        # doubled-resolution scan agrees
        _, rho2 = gt.rho_diagnostic(kernel, dom, directions=256)
        assert rho2 == pytest.approx(rho, rel=1e-4)
