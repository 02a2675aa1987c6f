"""Path sampler: acceptance-rejection draws, re-scoring identity, streams."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats as sps

import condwalk as cw
from condwalk import ConfigError, DomainError
from condwalk._quad import log_normal_pdf

NORMAL = cw.builtin_model("normal")
CEXP = cw.builtin_model("centered_exponential")
GAMMA = cw.builtin_model("gamma", rho=2.0, theta=1.0)
USQ = cw.builtin_model("normal_usquare")


class TestDrawTilted:
    @pytest.mark.parametrize("model,t", [
        (NORMAL, 0.6), (CEXP, 0.4), (GAMMA, -0.5), (USQ, 0.2),
    ], ids=lambda v: getattr(v, "name", v))
    def test_moments(self, model, t):
        rng = cw.stream(21, "tilted", model.name)
        y = draw = cw.draw_tilted(model, t, rng, size=100_000)
        u = model.u_map(draw)
        prof = cw.cumulants_at(model, t)
        se_mean = np.sqrt(prof.s2 / y.size)
        assert abs(u.mean() - prof.m) <= 4 * se_mean
        var_se = u.var() * np.sqrt((prof.mu4 / prof.s2**2 + 2.0) / y.size)
        assert abs(u.var() - prof.s2) <= 4 * var_se

    def test_vector_of_tilts(self):
        rng = cw.stream(22, "tv")
        ts = np.array([0.1, 0.3, 0.5])
        y = cw.draw_tilted(CEXP, ts, rng)
        assert y.shape == ts.shape
        assert (y > -1).all()


def _gof_counts(model, alpha, beta, m0, draws):
    """64-bin chi-square statistic against the numerically normalized target."""
    M = alpha * beta + m0
    lo, hi = model.x_support
    lo = max(lo, min(-8.0, M - 10 * np.sqrt(beta)))
    hi = min(hi, max(10.0, M + 10 * np.sqrt(beta)))
    grid = np.linspace(lo, hi, 1 << 14)
    pdf = np.exp(model.base_logpdf(grid) + log_normal_pdf(M, beta, model.u_map(grid)))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0.0, 1.0, 65), cdf, grid)
    obs = np.histogram(draws, bins=edges)[0]
    p = np.diff(np.interp(edges, grid, cdf))
    exp = p * draws.size
    return float(((obs - exp) ** 2 / exp).sum())


class TestSampleModulated:
    CRIT_1PCT = sps.chi2.ppf(0.99, 63)

    @pytest.mark.parametrize("model,alpha,beta,m0,method,L", [
        (CEXP, 0.4, 3.0, 0.2, "tilted", 25_000),
        (NORMAL, -0.3, 0.6, 0.1, "tilted", 25_000),
        (USQ, 0.1, 5.0, 1.0, "tilted", 25_000),
        (NORMAL, 0.05, 4.0, 0.0, "reparam", 25_000),
        (CEXP, 0.05, 4.0, 0.0, "envelope", 100_000),
    ], ids=["cexp-tilted", "normal-tilted", "usq-tilted", "normal-reparam",
            "cexp-envelope"])
    def test_goodness_of_fit(self, model, alpha, beta, m0, method, L):
        rng = cw.stream(31, "gof", model.name, method)
        draws = np.array([cw.sample_modulated(model, alpha, beta, m0, rng,
                                              method=method)[0]
                          for _ in range(L)])
        stat = _gof_counts(model, alpha, beta, m0, draws)
        assert stat < self.CRIT_1PCT

    def test_returns_proposal_count(self):
        y, count = cw.sample_modulated(CEXP, 0.3, 2.0, 0.1, cw.stream(32, "c"))
        assert count >= 1 and np.isfinite(y)

    def test_reparam_requires_identity(self):
        with pytest.raises(ConfigError):
            cw.sample_modulated(USQ, 0.1, 1.0, 0.5, cw.stream(33, "r"),
                                method="reparam")

    def test_envelope_violation(self):
        with pytest.raises(cw.EnvelopeViolation):
            cw.sample_modulated(NORMAL, 0.0, 1.0, 0.0, cw.stream(34, "e"),
                                method="reparam", envelope_constant=1e-8)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            cw.sample_modulated(CEXP, 0.1, 1.0, 0.0, cw.stream(35, "u"),
                                method="nope")

    def test_beta_positive(self):
        with pytest.raises(DomainError):
            cw.sample_modulated(CEXP, 0.1, 0.0, 0.0, cw.stream(36, "b"))


class TestRescoringIdentity:
    @pytest.mark.parametrize("model,ev", [
        (CEXP, cw.PointSum(a=0.25, n=40)),
        (NORMAL, cw.PointSum(a=-0.4, n=25)),
        (GAMMA, cw.PointSum(a=2.2, n=30)),
        (USQ, cw.PointFunctional(u_total=13.0, n=12)),
    ], ids=["cexp", "normal", "gamma", "usquare"])
    def test_batch_rescore_bitwise(self, model, ev):
        # evaluator and sampler share one engine: re-scored log_g is identical
        out = cw.sample_path_batch(model, ev, 8, 64, cw.stream(41, "rs", model.name))
        assert out["ok"].all()
        log_g, ok, _ = cw.eval_log_g_batch(model, ev, out["values"])
        assert ok.all()
        assert np.array_equal(log_g, out["log_g"])

    def test_scalar_rescore_bitwise(self):
        ev = cw.PointSum(a=0.3, n=15)
        ps = cw.sample_path(CEXP, ev, 6, cw.stream(42, "s"))
        lg, _ = cw.eval_log_g(CEXP, ev, ps.values)
        assert lg == ps.log_g

    def test_log_base_is_iid_loglik(self):
        ev = cw.PointSum(a=0.3, n=15)
        out = cw.sample_path_batch(CEXP, ev, 6, 32, cw.stream(43, "lb"))
        assert_allclose(out["log_base"],
                        CEXP.base_logpdf(out["values"]).sum(axis=1), rtol=1e-13)

    def test_reproducible_batches(self):
        ev = cw.PointSum(a=0.2, n=20)
        a = cw.sample_path_batch(CEXP, ev, 5, 40, cw.stream(44, "rep"))
        b = cw.sample_path_batch(CEXP, ev, 5, 40, cw.stream(44, "rep"))
        assert np.array_equal(a["values"], b["values"])
        assert np.array_equal(a["log_g"], b["log_g"])

    def test_scalar_seed_info_reproducible(self):
        ev = cw.PointSum(a=0.2, n=20)
        p1 = cw.sample_path(CEXP, ev, 5, cw.stream(45, "si"), seed_info="path-7")
        p2 = cw.sample_path(CEXP, ev, 5, cw.stream(45, "si"), seed_info="path-7")
        assert np.array_equal(p1.values, p2.values)
        assert p1.seed_info == p2.seed_info == "path-7"
        assert p1.k == 5


class TestMarginalLaw:
    def test_k1_mean_is_event_mean(self):
        # k=1 draw is the pure tilted marginal: mean m0 within 4 se, 1e5 draws
        a, n, L = 0.35, 50, 100_000
        out = cw.sample_path_batch(CEXP, cw.PointSum(a=a, n=n), 1, L,
                                   cw.stream(51, "k1"))
        y = out["values"][:, 0]
        t0 = cw.solve_tilt(CEXP, a)
        s = np.sqrt(float(CEXP.cgf_d2(t0)))
        assert abs(y.mean() - a) <= 4 * s / np.sqrt(L)

    def test_normal_long_run_mean(self):
        # n=1000, k=999: pooled Y mean within 4 naive standard errors of a
        a, n, k, L = 0.0736, 1000, 999, 12
        with pytest.warns(UserWarning, match="n-1"):
            out = cw.sample_path_batch(NORMAL, cw.PointSum(a=a, n=n), k, L,
                                       cw.stream(52, "nl"))
        y = out["values"][out["ok"]]
        assert y.size >= (L - 1) * k
        assert abs(y.mean() - a) <= 4.0 / np.sqrt(y.size)


class TestLargeSetSampler:
    def test_levels_exceed_a(self):
        ev = cw.ExceedanceSet(a=0.3, n=50, c=None)
        out = cw.sample_large_set_batch(CEXP, ev, 3, 5000, cw.stream(61, "ls"))
        assert (out["levels"] > 0.3).all()

    def test_level_mean_matches_overshoot_law(self):
        # E[S - a] = 1/(n t_a) for the untruncated law, within 4 se (1e5 draws)
        a, n, L = 0.3, 50, 100_000
        big_c = 1e9  # effectively untruncated
        ev = cw.ExceedanceSet(a=a, n=n, c=big_c)
        out = cw.sample_large_set_batch(CEXP, ev, 1, L, cw.stream(62, "lm"))
        t_a = cw.solve_tilt(CEXP, a)
        mean_target = 1.0 / (n * t_a)
        v = out["levels"] - a
        assert abs(v.mean() - mean_target) <= 4 * v.std() / np.sqrt(L)

    def test_truncated_level_cdf(self):
        # KS of S against the closed-form truncated exponential CDF, 1e5 draws
        a, n, c, L = 0.3, 50, 0.15, 100_000
        ev = cw.ExceedanceSet(a=a, n=n, c=c)
        out = cw.sample_large_set_batch(CEXP, ev, 1, L, cw.stream(63, "lc"))
        t_a = cw.solve_tilt(CEXP, a)
        rate = n * t_a
        cdf = lambda v: np.expm1(-rate * np.clip(v - a, 0.0, c)) / np.expm1(-rate * c)
        stat = sps.kstest(out["levels"], cdf).statistic
        assert stat < 1.628 / np.sqrt(L)  # 1% critical value
        assert (out["levels"] <= a + c).all()

    def test_rescore_with_levels(self):
        # mixture evaluation at the drawn levels matches the stored log_g
        ev = cw.ExceedanceSet(a=0.25, n=40, c=None)
        out = cw.sample_large_set_batch(CEXP, ev, 4, 50, cw.stream(64, "rr"))
        log_g, ok = cw.eval_log_g_nA_batch(CEXP, ev, out["values"])
        assert ok.all() and np.isfinite(log_g).all()

    def test_scalar_large_set_path(self):
        ev = cw.ExceedanceSet(a=0.3, n=30, c=None)
        ps = cw.sample_large_set_path(CEXP, ev, 4, cw.stream(65, "sp"))
        assert ps.randomized_level > 0.3
        assert ps.values.shape == (4,)


class TestAborts:
    def test_tight_conditioning_counts_aborts(self):
        # slack n(1+a)=1 over 20 coordinates: many paths exhaust step retries
        ev = cw.PointSum(a=-0.95, n=20)
        with pytest.warns(UserWarning, match="n-1"):
            out = cw.sample_path_batch(CEXP, ev, 19, 400, cw.stream(71, "ab"))
        assert 0 < (~out["ok"]).sum() < 400
        assert out["n_resamples"].sum() > 0
        # aborted rows carry no finite weight
        assert np.isneginf(out["log_g"][~out["ok"]]).all() or \
            not np.isfinite(out["log_g"][~out["ok"]]).any()
