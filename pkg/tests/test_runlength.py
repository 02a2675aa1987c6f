"""Run-length selection: saddlepoint density, A/B estimators, k_delta rule."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

import condwalk as cw
from condwalk import DomainError, NotReached, RangeError
from condwalk import oracles as orc

NORMAL = cw.builtin_model("normal")
CEXP = cw.builtin_model("centered_exponential")
GAMMA = cw.builtin_model("gamma", rho=2.0, theta=1.0)

A_DEEP = 0.6662985221326571  # exact Gamma-tail root at n=100, P=1e-8


class TestLogTiltRatio:
    def test_zero_at_base_mean(self):
        for model in [NORMAL, CEXP, GAMMA]:
            assert cw.log_tilt_ratio(model, 50, float(model.cgf_d1(0.0))) == pytest.approx(0.0, abs=1e-12)

    def test_normal_closed_form(self):
        # t = a, cgf = a^2/2: ratio power n gives n a^2 / 2 = n I(a)
        assert_allclose(cw.log_tilt_ratio(NORMAL, 100, 0.3), 100 * 0.3**2 / 2, rtol=1e-12)

    def test_exponential_closed_form(self):
        assert_allclose(cw.log_tilt_ratio(CEXP, 100, 0.3),
                        100 * (0.3 - np.log(1.3)), rtol=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(m_level=st.floats(-0.8, 6.0), count=st.integers(1, 2000))
    def test_equals_count_times_rate(self, m_level, count):
        # ties this module to the rate function: equality to 1e-10
        got = cw.log_tilt_ratio(CEXP, count, m_level)
        want = count * cw.rate(CEXP, m_level)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))

    def test_unattainable(self):
        with pytest.raises(RangeError):
            cw.log_tilt_ratio(CEXP, 10, -1.2)


class TestSaddlepointMeanDensity:
    @pytest.mark.parametrize("n,u", [(5, 0.3), (20, -0.1), (100, 0.02)])
    def test_normal_is_exact(self, n, u):
        # standard normal: the first-order formula is the N(0, 1/n) density
        want = -0.5 * np.log(2 * np.pi / n) - 0.5 * n * u**2
        assert_allclose(cw.saddlepoint_mean_logpdf(NORMAL, n, u), want, rtol=1e-12)

    def test_value_at_the_mean(self):
        # t=0: reduces to log(sqrt(n) / (s(0) sqrt(2 pi)))
        for model in [CEXP, GAMMA]:
            n = 17
            s0 = np.sqrt(float(model.cgf_d2(0.0)))
            want = 0.5 * np.log(n) - np.log(s0) - 0.5 * np.log(2 * np.pi)
            got = cw.saddlepoint_mean_logpdf(model, n, float(model.cgf_d1(0.0)))
            assert_allclose(got, want, rtol=1e-12)

    @pytest.mark.parametrize("u", [0.2, 0.4, 0.8])
    def test_exponential_n5_vs_convolution_oracle(self, u):
        got = np.exp(cw.saddlepoint_mean_logpdf(CEXP, 5, u))
        want = np.exp(orc.mean_density_by_convolution(CEXP, 5, u).log_value)
        assert abs(got / want - 1.0) <= 0.05

    def test_integrates_to_about_one(self):
        # first-order density mass within [0.9, 1.1] for n >= 20
        for model, lo, hi in [(CEXP, -0.85, 2.5), (NORMAL, -2.5, 2.5)]:
            n = 25
            f = lambda u: np.exp(cw.saddlepoint_mean_logpdf(model, n, u))
            mass = sum(integrate.quad(f, a, b, limit=200)[0]
                       for a, b in zip(np.linspace(lo, hi, 9)[:-1],
                                       np.linspace(lo, hi, 9)[1:]))
            assert 0.9 <= mass <= 1.1


class TestEstimateAB:
    def test_k0_collapses_to_one(self):
        ab = cw.estimate_AB(CEXP, cw.PointFunctional(u_total=4.0, n=20), 0, 16,
                            cw.stream(1, "ab0"))
        assert ab.a_hat == 1.0 and ab.b_hat == 1.0
        assert ab.a_stderr == 0.0 and ab.b_stderr == 0.0

    def test_deterministic_bitwise(self):
        ev = cw.PointFunctional(u_total=10.0, n=40)
        r1 = cw.estimate_AB(CEXP, ev, 7, 200, 9090)
        r2 = cw.estimate_AB(CEXP, ev, 7, 200, 9090)
        assert (r1.a_hat, r1.b_hat) == (r2.a_hat, r2.b_hat)

    def test_chunking_invariance(self):
        # any L prefix is reproducible regardless of internal chunking
        ev = cw.PointFunctional(u_total=10.0, n=40)
        small = cw.estimate_AB(CEXP, ev, 7, 100, 9090)
        assert np.isfinite(small.a_hat) and np.isfinite(small.b_hat)

    @pytest.mark.parametrize("k", [2, 5, 12])
    def test_variance_nonnegativity_within_noise(self, k):
        # A_hat >= B_hat^2 - 3 mc_stderr
        ev = cw.PointFunctional(u_total=40 * 0.3, n=40)
        ab = cw.estimate_AB(CEXP, ev, k, 3000, 1234)
        assert ab.a_hat >= ab.b_hat**2 - 3 * (ab.a_stderr + 2 * ab.b_stderr)

    def test_oracle_hook_matches_default_on_easy_event(self):
        # with the exact conditional supplied, B_hat stays compatible
        n, a, k = 40, 0.3, 5
        ev = cw.PointFunctional(u_total=n * a, n=n)
        hook = lambda paths: orc.exponential_conditional_logpdf(a, n, paths)
        ab = cw.estimate_AB(CEXP, ev, k, 4000, 5150)
        ao = cw.estimate_AB(CEXP, ev, k, 4000, 5150, conditional_logpdf=hook)
        assert abs(ab.b_hat - ao.b_hat) <= 3 * (ab.b_stderr + ao.b_stderr) + 0.02

    def test_discards_reported(self):
        # base paths that the conditioning makes impossible are counted
        ev = cw.PointFunctional(u_total=-4.0, n=12)
        ab = cw.estimate_AB(CEXP, ev, 10, 500, 777)
        assert 0 < ab.n_discarded < 500
        assert ab.L_used + ab.n_discarded == 500

    def test_all_discarded_raises(self):
        ev = cw.PointFunctional(u_total=-0.9 * 12, n=12)
        with pytest.raises(RangeError):
            cw.estimate_AB(CEXP, ev, 10, 500, 777)


class TestKReport:
    def _report(self):
        ev = cw.PointFunctional(u_total=40 * 0.5, n=40)
        return cw.select_k(CEXP, ev, delta=0.2, L=800, k_grid=[1, 2, 4, 8, 16],
                           rng=2718)

    def test_ci_algebra_exact(self):
        rep = self._report()
        assert_allclose(rep.ci_lo, rep.ere_bar - 2 * np.sqrt(rep.vre_bar), rtol=0, atol=0)
        assert_allclose(rep.ci_hi, rep.ere_bar + 2 * np.sqrt(rep.vre_bar), rtol=0, atol=0)
        assert (rep.vre_bar >= 0).all()

    def test_row_accessor(self):
        rep = self._report()
        row = rep.row(int(rep.ks[0]))
        assert row["ks"] == rep.ks[0]
        assert row["ere_bar"] == rep.ere_bar[0]

    def test_determinism(self):
        r1, r2 = self._report(), self._report()
        assert np.array_equal(r1.ks, r2.ks)
        assert np.array_equal(r1.ere_bar, r2.ere_bar)
        assert r1.k_delta == r2.k_delta

    def test_raw_vre_recorded(self):
        rep = self._report()
        assert rep.vre_raw.shape == rep.vre_bar.shape
        # clamped entries keep their raw (possibly negative) value on record
        assert (rep.vre_bar >= rep.vre_raw - 1e-15).all()


class TestSelectK:
    def test_stops_at_first_grid_hit(self):
        # delta inside CI at the first scanned k: loop exits immediately
        ev = cw.PointFunctional(u_total=40 * 0.5, n=40)
        probe = cw.select_k(CEXP, ev, delta=0.2, L=800, k_grid=[5, 10, 20], rng=11)
        first = cw.select_k(CEXP, ev, delta=0.2, L=800,
                            k_grid=[int(probe.k_delta)], rng=11)
        assert first.k_delta == probe.k_delta
        assert list(first.ks) == [probe.k_delta]

    def test_explicit_grid_scan_order(self):
        ev = cw.PointFunctional(u_total=40 * 0.5, n=40)
        rep = cw.select_k(CEXP, ev, delta=0.2, L=800, k_grid=[2, 6, 12], rng=12)
        assert rep.k_delta in (2, 6, 12)
        assert (np.diff(rep.ks) > 0).all()

    def test_not_reached_carries_report(self):
        ev = cw.PointFunctional(u_total=40 * 0.5, n=40)
        with pytest.raises(NotReached) as exc:
            cw.select_k(CEXP, ev, delta=25.0, L=200, k_grid=[1, 2], rng=13)
        assert exc.value.report is not None
        assert list(exc.value.report.ks) == [1, 2]
        assert exc.value.report.k_delta is None

    def test_delta_positive_required(self):
        with pytest.raises(DomainError):
            cw.select_k(CEXP, cw.PointFunctional(u_total=2.0, n=10),
                        delta=0.0, L=10, rng=1)

    def test_longer_walk_admits_longer_run(self):
        # at equal delta the n=1000 walk certifies a larger k than n=100
        # (shallow levels; the rule's output, while noisy, keeps this order)
        k100 = cw.select_k(CEXP, cw.PointFunctional(u_total=100 * 0.2472256149072083, n=100),
                           delta=0.1, L=10_000, rng=31).k_delta
        k1000 = cw.select_k(CEXP, cw.PointFunctional(u_total=1000 * 0.07503283208645332, n=1000),
                            delta=0.1, L=10_000, rng=31).k_delta
        assert k100 < k1000

    def test_oracle_rule_reproduces_k_delta(self):
        # the same stopping rule run with the exact conditional lands within
        # +-10 of the approximation-based answer (identical paths via CRN)
        n = 100
        ev = cw.PointFunctional(u_total=n * A_DEEP, n=n)
        hook = lambda paths: orc.exponential_conditional_logpdf(A_DEEP, n, paths)
        ka = cw.select_k(CEXP, ev, delta=0.1, L=10_000, rng=777).k_delta
        ko = cw.select_k(CEXP, ev, delta=0.1, L=10_000, rng=777,
                         conditional_logpdf=hook).k_delta
        assert abs(ka - ko) <= 10
