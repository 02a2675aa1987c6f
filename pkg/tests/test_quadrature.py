"""Log-space quadrature engine: windows, modulated integrals, self-checks."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate
from scipy.stats import norm as spnorm

import condwalk as cw
from condwalk._quad import (
    adaptive_log_integral,
    log_normal_pdf,
    merge_windows,
    modulated_log_integral,
    modulated_log_integral_batch,
)

NORMAL = cw.builtin_model("normal")
CEXP = cw.builtin_model("centered_exponential")
GAMMA = cw.builtin_model("gamma", rho=2.0, theta=1.0)
USQ = cw.builtin_model("normal_usquare")


class TestLogNormalPdf:
    def test_matches_scipy(self):
        xs = np.linspace(-6.0, 6.0, 25)
        assert_allclose(log_normal_pdf(0.3, 2.5, xs),
                        spnorm.logpdf(xs, loc=0.3, scale=np.sqrt(2.5)),
                        rtol=1e-13, atol=1e-13)

    def test_scalar_and_array(self):
        assert_allclose(log_normal_pdf(0.0, 1.0, 0.0), -0.5 * np.log(2 * np.pi))


class TestMergeWindows:
    def test_overlapping(self):
        assert merge_windows([(0, 2), (1, 3), (5, 6)]) == [(0, 3), (5, 6)]

    def test_empty_dropped(self):
        assert merge_windows([(2, 2), (3, 1), (0, 1)]) == [(0, 1)]

    def test_touching_merge(self):
        assert merge_windows([(0, 1), (1, 2)]) == [(0, 2)]


def _quad_reference(model, M, beta):
    """scipy.integrate.quad cross-check, split around the Gaussian window."""
    f = lambda x: np.exp(model.base_logpdf(x) + log_normal_pdf(M, beta, model.u_map(x)))
    lo, hi = model.x_support
    sd = np.sqrt(beta)
    cuts = [M - 10 * sd, M - sd, M, M + sd, M + 10 * sd, -8.0, 8.0, 0.0]
    pts = sorted({max(lo, min(hi, c)) for c in cuts} | {max(lo, -40.0), min(hi, 60.0)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, limit=400)[0]
    return np.log(total)


class TestModulatedIntegral:
    @pytest.mark.parametrize("model", [NORMAL, CEXP, GAMMA], ids=lambda m: m.name)
    @pytest.mark.parametrize("M,beta", [(0.1, 0.5), (0.5, 25.0), (2.0, 0.01), (-0.3, 4.0)])
    def test_against_scipy_quad(self, model, M, beta):
        if model.name == "gamma" and M < 0:
            M = 2.0 + M  # keep the window near the Gamma bulk
        got = modulated_log_integral(model, M, beta)
        want = _quad_reference(model, M, beta)
        assert_allclose(got, want, rtol=0, atol=1e-7)

    def test_usquare_against_scipy_quad(self):
        got = modulated_log_integral(USQ, 1.5, 2.0)
        want = _quad_reference(USQ, 1.5, 2.0)
        assert_allclose(got, want, rtol=0, atol=1e-7)

    def test_normal_closed_form(self):
        # int n(0,1,x) n(M,beta,x) dx = n(M; 0, 1+beta)
        for M, beta in [(0.3, 0.7), (3.0, 40.0), (-1.0, 0.05)]:
            got = modulated_log_integral(NORMAL, M, beta)
            assert_allclose(got, log_normal_pdf(0.0, 1.0 + beta, M), rtol=0, atol=1e-9)

    def test_cexp_closed_form_hook(self):
        # model hook exp(beta/2 - M - 1) Phi((M+1-beta)/sqrt(beta)) vs quadrature
        for M, beta in [(0.2, 0.8), (1.5, 30.0), (0.0, 0.02)]:
            hook = float(CEXP.log_modulated_integral(M, beta))
            quad_route = modulated_log_integral(CEXP, M, beta)
            assert_allclose(hook, quad_route, rtol=0, atol=1e-8)

    def test_batch_matches_scalar(self):
        Ms = np.array([0.1, 0.4, 1.2, -0.2])
        betas = np.array([0.5, 3.0, 11.0, 0.9])
        batch = modulated_log_integral_batch(CEXP, Ms, betas)
        scalar = [modulated_log_integral(CEXP, M, b) for M, b in zip(Ms, betas)]
        assert_allclose(batch, scalar, rtol=1e-12)

    def test_far_window_is_neg_inf_not_nan(self):
        # both factors underflow: the integral must come back -inf, never nan
        val = modulated_log_integral(CEXP, 1e6, 1.0)
        assert val == -np.inf or val < -1e5


class TestAdaptiveLogIntegral:
    def test_gaussian_mass(self):
        log_f = lambda x: log_normal_pdf(0.0, 1.0, x)
        got = adaptive_log_integral(log_f, [(-9.0, 9.0)])
        assert_allclose(got, 0.0, atol=1e-10)

    def test_exponential_mass(self):
        log_f = lambda x: np.where(x >= 0, -x, -np.inf)
        got = adaptive_log_integral(log_f, [(0.0, 45.0)])
        assert_allclose(got, 0.0, atol=1e-10)

    def test_split_windows_add(self):
        log_f = lambda x: log_normal_pdf(0.0, 1.0, x)
        got = adaptive_log_integral(log_f, [(-9.0, 0.0), (0.0, 9.0)])
        assert_allclose(got, 0.0, atol=1e-10)

    def test_empty_windows(self):
        log_f = lambda x: np.zeros_like(x)
        assert adaptive_log_integral(log_f, [(1.0, 1.0)]) == -np.inf
