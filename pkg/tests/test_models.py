"""Model layer: cumulants, tilt solving, tilted densities, Hermite helpers."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

import condwalk as cw
from condwalk import DomainError, RangeError

# (name, kwargs, t grid safely inside t_domain, x-window factory for the
# tilted density at t: returns (lo, hi) holding all mass to ~1e-12)
CASES = [
    ("normal", {}, np.linspace(-2.0, 2.0, 9),
     lambda t: (t - 12.0, t + 12.0)),
    ("centered_exponential", {}, np.linspace(-2.0, 0.9, 9),
     lambda t: (-1.0, -1.0 + 45.0 / (1.0 - t))),
    ("gamma", {"rho": 2.0, "theta": 1.0}, np.linspace(-2.0, 0.9, 9),
     lambda t: (0.0, 60.0 / (1.0 - t))),
    ("normal_usquare", {}, np.linspace(-2.0, 0.45, 9),
     lambda t: (-14.0 / np.sqrt(1.0 - 2.0 * t), 14.0 / np.sqrt(1.0 - 2.0 * t))),
]

MODELS = {name: cw.builtin_model(name, **kw) for name, kw, _, _ in CASES}


def _quad_moments(model, t, window):
    """Numerical (mass, mean, variance) of u(X) under the tilted density."""
    f = lambda x: np.exp(cw.tilted_logpdf(model, t, x))
    lo, hi = window
    mid = float(model.cgf_d1(t))
    # split at the tilted mean so quad cannot miss a narrow bump
    if model.is_identity:
        pts = sorted([lo, mid, hi])
    else:
        pts = [lo, 0.0, hi] if lo < 0.0 < hi else [lo, hi]
    mass = mean = second = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        mass += integrate.quad(f, a, b, limit=200)[0]
        mean += integrate.quad(lambda x: model.u_map(x) * f(x), a, b, limit=200)[0]
        second += integrate.quad(lambda x: model.u_map(x) ** 2 * f(x), a, b, limit=200)[0]
    return mass, mean, second - mean**2


class TestCumulants:
    @pytest.mark.parametrize(
        "name,t,expected",
        [
            ("normal", 0.7, (0.7, 1.0, 0.0, 0.0)),
            ("centered_exponential", 0.0, (0.0, 1.0, 2.0, 6.0)),
            ("centered_exponential", 0.5, (1.0, 4.0, 16.0, 96.0)),
        ],
    )
    def test_closed_form(self, name, t, expected):
        prof = cw.cumulants_at(MODELS[name], t)
        assert_allclose((prof.m, prof.s2, prof.mu3, prof.mu4), expected, rtol=1e-12)

    @pytest.mark.parametrize("name,kw,tgrid,win", CASES)
    def test_match_numerical_differentiation(self, name, kw, tgrid, win):
        model = MODELS[name]
        h = 1e-5
        for t in tgrid[1:-1]:
            prof = cw.cumulants_at(model, t)
            d1 = (model.cgf(t + h) - model.cgf(t - h)) / (2 * h)
            d2 = (model.cgf(t + h) - 2 * model.cgf(t) + model.cgf(t - h)) / h**2
            assert_allclose(prof.m, d1, rtol=1e-6, atol=1e-6)
            assert_allclose(prof.s2, d2, rtol=1e-4, atol=1e-4)

    @pytest.mark.parametrize("name,kw,tgrid,win", CASES)
    def test_t_zero_matches_base_cumulants(self, name, kw, tgrid, win):
        model = MODELS[name]
        prof = cw.cumulants_at(model, 0.0)
        mass, mean, var = _quad_moments(model, 0.0, win(0.0))
        assert_allclose(mass, 1.0, rtol=1e-8)
        assert_allclose(prof.m, mean, rtol=1e-7, atol=1e-9)
        assert_allclose(prof.s2, var, rtol=1e-6)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            cw.cumulants_at(MODELS["centered_exponential"], 1.5)
        with pytest.raises(DomainError):
            cw.tilted_logpdf(MODELS["centered_exponential"], 1.5, 0.0)


class TestSolveTilt:
    @pytest.mark.parametrize("a", [-0.5, 0.0, 0.3, 2.0])
    def test_normal_identity(self, a):
        # m(t) = t for the standard normal
        assert_allclose(cw.solve_tilt(MODELS["normal"], a), a, atol=1e-12)

    @pytest.mark.parametrize("a", [-0.6, 0.2472256149072083, 1.0, 5.0])
    def test_centered_exponential_closed_form(self, a):
        t = cw.solve_tilt(MODELS["centered_exponential"], a)
        assert_allclose(t, a / (1.0 + a), atol=1e-12)

    @pytest.mark.parametrize("name,kw,tgrid,win", CASES)
    def test_mean_alpha_is_t_zero(self, name, kw, tgrid, win):
        model = MODELS[name]
        assert_allclose(cw.solve_tilt(model, float(model.cgf_d1(0.0))), 0.0, atol=1e-10)

    def test_unattainable_alpha(self):
        with pytest.raises(RangeError):
            cw.solve_tilt(MODELS["centered_exponential"], -1.5)
        with pytest.raises(RangeError):
            cw.solve_tilt(MODELS["normal_usquare"], -0.2)

    @settings(max_examples=120, deadline=None)
    @given(idx=st.integers(0, len(CASES) - 1), frac=st.floats(0.01, 0.99))
    def test_round_trip_property(self, idx, frac):
        name, _, tgrid, _ = CASES[idx]
        model = MODELS[name]
        t = tgrid[0] + frac * (tgrid[-1] - tgrid[0])
        alpha = float(model.cgf_d1(t))
        t_hat = cw.solve_tilt(model, alpha)
        # contract: |m(t_hat) - alpha| <= tol * max(1, |alpha|), tol = 1e-10
        assert abs(float(model.cgf_d1(t_hat)) - alpha) <= 1e-10 * max(1.0, abs(alpha))
        assert_allclose(t_hat, t, atol=1e-7, rtol=1e-7)

    def test_many_with_linear_term(self):
        # root of m(t) + lam*t = target, monotone since m' = s^2 > 0
        model = MODELS["centered_exponential"]
        targets = np.array([0.5, 1.0, 3.0, -0.4])
        lam = 2.5
        t, ok = cw.solve_tilt_many(model, targets, linear=lam)
        assert ok.all()
        resid = np.array([float(model.cgf_d1(ti)) for ti in t]) + lam * t
        assert_allclose(resid, targets, atol=1e-9)

    def test_many_matches_scalar(self):
        model = MODELS["gamma"]
        alphas = np.array([1.2, 2.0, 3.5, 8.0])
        t, ok = cw.solve_tilt_many(model, alphas)
        assert ok.all()
        scalar = np.array([cw.solve_tilt(model, a) for a in alphas])
        assert_allclose(t, scalar, atol=1e-10)


class TestTiltedDensity:
    @pytest.mark.parametrize("name,kw,tgrid,win", CASES)
    def test_t_zero_is_base(self, name, kw, tgrid, win):
        model = MODELS[name]
        xs = np.linspace(*win(0.0), 31)[1:-1]
        assert_allclose(cw.tilted_logpdf(model, 0.0, xs), model.base_logpdf(xs),
                        rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("name,kw,tgrid,win", CASES)
    def test_normalization_and_moments(self, name, kw, tgrid, win):
        # integrates to 1 and matches cumulants_at to quadrature accuracy
        model = MODELS[name]
        for t in [tgrid[1], tgrid[len(tgrid) // 2], tgrid[-2]]:
            prof = cw.cumulants_at(model, t)
            mass, mean, var = _quad_moments(model, t, win(t))
            assert_allclose(mass, 1.0, rtol=1e-6)
            assert_allclose(mean, prof.m, rtol=1e-6, atol=1e-8)
            assert_allclose(var, prof.s2, rtol=1e-6, atol=1e-8)

    def test_exponential_tilted_is_shifted_exponential(self):
        # tilting the centered exponential to mean a gives rate 1/(1+a) on (-1, inf)
        model = MODELS["centered_exponential"]
        a = 0.7
        t = cw.solve_tilt(model, a)
        xs = np.linspace(-0.99, 8.0, 50)
        expected = -np.log1p(a) - (xs + 1.0) / (1.0 + a)
        assert_allclose(cw.tilted_logpdf(model, t, xs), expected, rtol=1e-12)

    def test_normal_tilted_is_shifted_normal(self):
        model = MODELS["normal"]
        a = -1.3
        t = cw.solve_tilt(model, a)
        xs = np.linspace(-5.0, 5.0, 41)
        expected = -0.5 * np.log(2 * np.pi) - 0.5 * (xs - a) ** 2
        assert_allclose(cw.tilted_logpdf(model, t, xs), expected, rtol=0, atol=1e-12)


class TestNewtonTiltStep:
    def test_fixed_point(self):
        assert cw.newton_tilt_step(0.4, 1.0, 1.0, 2.0) == 0.4

    def test_normal_exact(self):
        assert_allclose(cw.newton_tilt_step(0.2, 0.25, 0.2, 1.0), 0.25, rtol=1e-15)

    def test_exponential_one_step_accuracy(self):
        model = MODELS["centered_exponential"]
        t = cw.newton_tilt_step(0.5, 1.1, 1.0, 4.0)
        assert_allclose(t, 0.525, rtol=1e-15)
        assert abs(float(model.cgf_d1(t)) - 1.1) < 0.01


class TestHermite:
    @pytest.mark.parametrize(
        "order,x,expected",
        [(3, 0.0, 0.0), (3, 2.0, 2.0), (4, 1.0, 4.0), (6, 1.0, 16.0)],
    )
    def test_values(self, order, x, expected):
        assert_allclose(cw.hermite(order, x), expected, rtol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(x=st.floats(-20.0, 20.0))
    def test_parity(self, x):
        assert cw.hermite(3, -x) == -cw.hermite(3, x)
        assert cw.hermite(4, -x) == cw.hermite(4, x)
        assert cw.hermite(6, -x) == cw.hermite(6, x)

    def test_vectorized(self):
        xs = np.array([0.0, 1.0, 2.0])
        assert_allclose(cw.hermite(3, xs), xs**3 - 3 * xs, rtol=1e-15)


class TestRegistry:
    def test_known_names(self):
        for name in ["normal", "centered_exponential", "normal_usquare"]:
            assert cw.builtin_model(name).name == name
        g = cw.builtin_model("gamma", rho=2.0, theta=1.5)
        assert_allclose(float(g.cgf_d1(0.0)), 3.0, rtol=1e-12)

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            cw.builtin_model("weibull")

    def test_gamma_requires_params(self):
        with pytest.raises((DomainError, cw.ConfigError, TypeError)):
            cw.builtin_model("gamma")
