"""Path simulation under the recursive approximating density.

Each step of a conditioned run draws Y_{i+1} from a base density modulated by
a Gaussian in u-space, q(y) ∝ p_X(y) * n(alpha*beta + shift, beta, u(y)).
Three acceptance-rejection routes are provided:

- "tilted" (default): propose from the exponentially tilted law at
  t~ = clamp(alpha); the likelihood ratio then collapses to
  exp(-(u(y) - u*)^2 / (2 beta)) with u* = center - beta*t~, an exact bound
  with acceptance probability ~ 1 - O(1/(n-i)) in every regime.
- "reparam" (identity u only): substitute y = center + sqrt(beta)*ndtri(w),
  which turns the target into a density proportional to p_X(y(w)) on (0,1);
  reject against a constant envelope over a uniform proposal.
- "envelope": propose from p_X itself and accept with probability
  exp(-(u(y) - center)^2 / (2 beta)) (constant 1/sqrt(2 pi beta)).

The last two have acceptance rates that collapse like exp(-t^2 s^2 (n-i)/2)
deep in the large-deviation regime, which is why "tilted" is the default.

A drawn step is retried (up to max_step_retries) when it would drive the
next required mean m_{i+1} out of the attainable range; the path aborts with
RangeError after that.  Sampling and re-scoring share the step engine of the
conditioning module, so eval_log_g on a sampled path reproduces the stored
log_g bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .conditioning import (
    PointFunctional,
    _effective_shift_mode,
    _log_factor,
    _step_columns,
    event_u_total,
    validate_event,
)
from .errors import ConfigError, DomainError, EnvelopeViolation, NoConvergence, RangeError
from .models import Model, solve_tilt, solve_tilt_many, tilted_logpdf

__all__ = [
    "PathSample",
    "sample_modulated",
    "sample_path",
    "sample_path_batch",
    "sample_large_set_path",
    "sample_large_set_batch",
    "draw_tilted",
]


@dataclass
class PathSample:
    """A simulated conditioned run with its densities and stream identity."""

    values: np.ndarray
    log_g: float
    log_base: float
    randomized_level: Optional[float] = None
    seed_info: str = ""
    n_resamples: int = 0

    @property
    def k(self) -> int:
        return int(self.values.shape[0])


def _clamp_tilt_array(model: Model, t):
    lo, hi = model.t_domain
    t = np.asarray(t, dtype=float)
    if math.isfinite(hi):
        t = np.minimum(t, hi - 1e-9 * max(1.0, abs(hi)))
    if math.isfinite(lo):
        t = np.maximum(t, lo + 1e-9 * max(1.0, abs(lo)))
    return t


def _numeric_tilted_draw(model: Model, t: float, rng, size=None):
    """Grid inverse-CDF fallback for models without a closed-form tilted sampler."""
    if not model.is_identity:
        raise ConfigError(
            f"model {model.name} has no tilted sampler and a non-identity map; "
            "supply sampler_tilted"
        )
    m_t = float(model.cgf_d1(t))
    s_t = math.sqrt(float(model.cgf_d2(t)))
    lo = max(model.x_support[0], min(model.x_bulk[0], m_t - 14.0 * s_t))
    hi = min(model.x_support[1], max(model.x_bulk[1], m_t + 14.0 * s_t))
    grid = np.linspace(lo, hi, 8193)
    pdf = np.exp(tilted_logpdf(model, t, grid))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    u = rng.random(size)
    return np.interp(u, cdf, grid)


def draw_tilted(model: Model, t, rng, size=None):
    """Draw from the tilted law pi_t; closed form when the model provides one."""
    if model.sampler_tilted is not None:
        return model.sampler_tilted(t, rng, size)
    if np.ndim(t) == 0:
        return _numeric_tilted_draw(model, float(t), rng, size)
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape)
    for j, tj in enumerate(t):
        out[j] = _numeric_tilted_draw(model, float(tj), rng)
    return out


def _proposal_tilt(model: Model, alpha, beta, shift):
    """Tilt for the "tilted" route: solves m(t) + beta*t = alpha*beta + shift.

    At this t the proposal pi_t concentrates exactly where the acceptance
    window exp(-(u - u*)^2 / (2 beta)) with u* = C - beta*t is widest, so the
    acceptance rate stays ~ 1 - O(1/(n-i)) even when the running mean has
    drifted away from the shift point.  Falls back to clamped alpha where the
    solve fails (the bound stays exact; only efficiency degrades).
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    shift = np.asarray(shift, dtype=float)
    target = alpha * beta + shift
    start = _clamp_tilt_array(model, np.where(np.isfinite(alpha), alpha, 0.0))
    t, okt = solve_tilt_many(model, target, warm_start=start, linear=beta)
    return np.where(okt, t, start)


def _compile_reparam_envelope(model: Model, M: float, beta: float) -> float:
    w = np.linspace(1e-12, 1.0 - 1e-12, 8193)
    p = np.exp(model.base_logpdf(M + math.sqrt(beta) * ndtri(w)))
    sup = float(np.max(p))
    if sup <= 0.0:
        raise EnvelopeViolation(
            f"reparam envelope is identically zero for center {M}, beta {beta}"
        )
    return 1.05 * sup


def sample_modulated(model: Model, alpha: float, beta: float, m0: float, rng,
                     method: str = "tilted", max_proposals: int = 1_000_000,
                     envelope_constant: Optional[float] = None):
    """One draw with density ∝ p_X(x)·n(alpha*beta + m0, beta, u(x)).

    Returns (value, n_proposals).  envelope_constant overrides the compiled
    bound of the "reparam" route (EnvelopeViolation if a proposal beats it).
    """
    if not beta > 0:
        raise DomainError(f"sample_modulated needs beta > 0, got {beta}")
    M = alpha * beta + m0
    if method == "tilted":
        t_tilde = float(_proposal_tilt(model, np.asarray([alpha]),
                                       np.asarray([beta]), np.asarray([m0]))[0])
        u_star = M - beta * t_tilde
        for count in range(1, max_proposals + 1):
            y = draw_tilted(model, t_tilde, rng)
            u_y = float(model.u_map(y))
            if math.log(rng.random()) <= -((u_y - u_star) ** 2) / (2.0 * beta):
                return float(y), count
    elif method == "reparam":
        if not model.is_identity:
            raise ConfigError("the reparam route requires an identity conditioning map")
        K = envelope_constant if envelope_constant is not None else \
            _compile_reparam_envelope(model, M, beta)
        sqb = math.sqrt(beta)
        for count in range(1, max_proposals + 1):
            w = rng.random()
            p = math.exp(float(model.base_logpdf(M + sqb * ndtri(w))))
            if p > K * (1.0 + 1e-12):
                raise EnvelopeViolation(
                    f"proposal density {p} exceeds envelope constant {K}"
                )
            if rng.random() * K <= p:
                return float(M + sqb * ndtri(w)), count
    elif method == "envelope":
        for count in range(1, max_proposals + 1):
            y = model.sampler_base(rng)
            u_y = float(model.u_map(y))
            if math.log(rng.random()) <= -((u_y - M) ** 2) / (2.0 * beta):
                return float(y), count
    else:
        raise ConfigError(f"unknown sample_modulated method {method!r}")
    raise NoConvergence(
        f"sample_modulated({method}) exhausted {max_proposals} proposals "
        f"(alpha={alpha}, beta={beta}, m0={m0})"
    )


def _support_interval(model: Model):
    return model.x_support


def _draw_step_scalar(model: Model, cols: dict, rng, method: str):
    """One accepted draw for the step described by cols (batch-of-one dict)."""
    if cols["modulated"]:
        y, _ = sample_modulated(
            model, float(cols["alpha"][0]), float(cols["beta"][0]),
            float(cols["shift"][0]), rng, method=method,
        )
        return y
    return float(draw_tilted(model, float(cols["t"][0]), rng))


def sample_path(model: Model, event, k: int, rng, shift_mode: str = "paper_m0",
                method: str = "tilted", max_step_retries: int = 100,
                seed_info: str = "") -> PathSample:
    """Simulate Y_1^k under the approximating density g for a point event.

    Y_1 comes from the tilted law at m_0 (the modulated factor under
    "adaptive_mi"); later steps run the recursion and draw via
    sample_modulated.  k = n is allowed for identity maps: the recursion
    covers the first n-1 steps and the last coordinate is the deterministic
    completion u_total - sum; log_g then scores the first n-1 coordinates.
    """
    validate_event(model, event)
    if event.kind not in ("PointSum", "PointFunctional"):
        raise ConfigError("sample_path takes a point conditioning event; "
                          "use sample_large_set_path for exceedance sets")
    n = event.n
    if not 1 <= k <= n:
        raise DomainError(f"run length k={k} must satisfy 1 <= k <= n (n={n})")
    complete_last = k == n
    if complete_last and not model.is_identity:
        raise ConfigError("k = n requires an identity conditioning map "
                          "(deterministic completion of the last step)")
    if k >= n - 1:
        warnings.warn(f"k={k} >= n-1: approximation quality degrades at the last step",
                      stacklevel=2)
    k_rec = k - 1 if complete_last else k

    mode = _effective_shift_mode(model, event, shift_mode)
    u_total = event_u_total(event)
    m0 = u_total / n
    lo_u, hi_u = model.u_support
    x_lo, x_hi = _support_interval(model)

    values = np.empty(k)
    running = 0.0
    log_g = np.zeros(1)
    ok = np.ones(1, dtype=bool)
    prev = None
    n_resamples = 0

    for i in range(k_rec):
        m_i = (u_total - running) / (n - i)
        if not (lo_u < m_i < hi_u):
            raise RangeError(f"step {i}: required mean m_i={m_i} left the attainable range")
        cols = _step_columns(model, i, n, np.array([m_i]), np.array([True]), prev,
                             mode, m0, event.a, need_log_C=True)
        if not cols["ok"][0]:
            raise RangeError(f"step {i}: tilt solve failed for m_i={m_i}")

        for _attempt in range(max_step_retries + 1):
            y = _draw_step_scalar(model, cols, rng, method)
            u_y = float(model.u_map(y))
            new_running = running + u_y
            feasible = True
            if i + 1 < k_rec:
                m_next = (u_total - new_running) / (n - i - 1)
                feasible = lo_u < m_next < hi_u
            if complete_last and i == k_rec - 1:
                y_last = u_total - new_running
                feasible = feasible and (x_lo < y_last < x_hi)
            if feasible:
                break
            n_resamples += 1
        else:
            raise RangeError(
                f"step {i}: {max_step_retries} resamples exhausted; the conditioning "
                "leaves no feasible continuation"
            )

        values[i] = y
        running = new_running
        factor = _log_factor(model, cols, np.array([y]), np.array([u_y]))
        log_g = np.where(ok, log_g + factor, -np.inf)
        prev = cols

    if complete_last:
        values[k - 1] = u_total - running

    log_base = float(np.sum(model.base_logpdf(values)))
    return PathSample(values=values, log_g=float(log_g[0]), log_base=log_base,
                      seed_info=seed_info, n_resamples=n_resamples)


def sample_path_batch(model: Model, event, k: int, L: int, rng,
                      shift_mode: str = "paper_m0", method: str = "tilted",
                      max_step_retries: int = 100, max_proposals: int = 1_000_000,
                      u_totals=None):
    """Simulate L paths at once from one RNG stream.

    Returns a dict with values (L, k), log_g (L,), log_base (L,), ok (L,) and
    n_resamples (L,).  Paths whose retry budget is exhausted are marked not-ok
    (values NaN from the failing step on, log_g -inf) and never raise; the
    draw sequence is a deterministic function of the stream, so results do not
    depend on how callers shard work.  Only the "tilted" route is supported
    here; use sample_path for the other acceptance-rejection methods.
    u_totals, when given, conditions row j on its own total u_totals[j]
    (the two-step exceedance sampler draws one level per row).
    """
    if method != "tilted":
        raise ConfigError("sample_path_batch supports only the tilted proposal route")
    if u_totals is None:
        validate_event(model, event)
    if event.kind not in ("PointSum", "PointFunctional"):
        raise ConfigError("sample_path_batch takes a point conditioning event")
    n = event.n
    if not 1 <= k <= n:
        raise DomainError(f"run length k={k} must satisfy 1 <= k <= n (n={n})")
    complete_last = k == n
    if complete_last and not model.is_identity:
        raise ConfigError("k = n requires an identity conditioning map")
    if k >= n - 1:
        warnings.warn(f"k={k} >= n-1: approximation quality degrades at the last step",
                      stacklevel=2)
    k_rec = k - 1 if complete_last else k

    mode = _effective_shift_mode(model, event, shift_mode)
    if u_totals is None:
        u_total = event_u_total(event)
        a_like = event.a
    else:
        u_total = np.broadcast_to(np.asarray(u_totals, dtype=float), (L,))
        a_like = u_total / n
    m0 = u_total / n
    lo_u, hi_u = model.u_support
    x_lo, x_hi = _support_interval(model)

    values = np.full((L, k), np.nan)
    running = np.zeros(L)
    log_g = np.zeros(L)
    log_base = np.zeros(L)
    ok = np.ones(L, dtype=bool)
    n_resamples = np.zeros(L, dtype=np.int64)
    prev = None

    for i in range(k_rec):
        m_col = np.where(ok, (u_total - running) / (n - i), m0)
        ok &= (m_col > lo_u) & (m_col < hi_u) & np.isfinite(m_col)
        cols = _step_columns(model, i, n, m_col, ok, prev, mode, m0, a_like,
                             need_log_C=True)
        ok = cols["ok"]

        t_tilde = _proposal_tilt(model, cols["alpha"], cols["beta"], cols["shift"])
        center = cols["alpha"] * cols["beta"] + cols["shift"]
        u_star = center - cols["beta"] * t_tilde
        beta = cols["beta"]

        y_step = np.full(L, np.nan)
        u_step = np.full(L, np.nan)
        pending = ok.copy()
        retries = np.zeros(L, dtype=np.int64)
        proposals = np.zeros(L, dtype=np.int64)
        while pending.any():
            idx = np.nonzero(pending)[0]
            if cols["modulated"]:
                cand = np.asarray(draw_tilted(model, t_tilde[idx], rng, size=idx.shape[0]))
                u_cand = np.asarray(model.u_map(cand), dtype=float)
                log_u = np.log(rng.random(idx.shape[0]))
                ar_ok = log_u <= -((u_cand - u_star[idx]) ** 2) / (2.0 * beta[idx])
            else:
                cand = np.asarray(draw_tilted(model, cols["t"][idx], rng, size=idx.shape[0]))
                u_cand = np.asarray(model.u_map(cand), dtype=float)
                ar_ok = np.ones(idx.shape[0], dtype=bool)
            proposals[idx] += 1

            new_running = running[idx] + u_cand
            tot_idx = u_total if np.ndim(u_total) == 0 else u_total[idx]
            feasible = np.ones(idx.shape[0], dtype=bool)
            if i + 1 < k_rec:
                m_next = (tot_idx - new_running) / (n - i - 1)
                feasible = (m_next > lo_u) & (m_next < hi_u)
            if complete_last and i == k_rec - 1:
                y_last = tot_idx - new_running
                feasible &= (y_last > x_lo) & (y_last < x_hi)

            accept = ar_ok & feasible
            acc_idx = idx[accept]
            y_step[acc_idx] = cand[accept]
            u_step[acc_idx] = u_cand[accept]
            pending[acc_idx] = False
            retries[idx[ar_ok & ~feasible]] += 1

            give_up = pending & ((retries > max_step_retries) | (proposals > max_proposals))
            ok &= ~give_up
            pending &= ok

        n_resamples += retries
        values[ok, i] = y_step[ok]
        running = np.where(ok, running + u_step, running)
        factor = _log_factor(model, cols, np.where(ok, y_step, 0.0),
                             np.where(ok, u_step, 0.0))
        log_g = np.where(ok, log_g + factor, -np.inf)
        log_base = np.where(ok, log_base + model.base_logpdf(np.where(ok, y_step, 0.0)),
                            -np.inf)
        prev = cols

    if complete_last:
        last = u_total - running
        values[ok, k - 1] = last[ok]
        log_base = np.where(ok, log_base + model.base_logpdf(np.where(ok, last, 0.0)),
                            -np.inf)
    return {
        "values": values,
        "log_g": log_g,
        "log_base": log_base,
        "ok": ok,
        "n_resamples": n_resamples,
    }


def sample_large_set_path(model: Model, event, k: int, rng,
                          shift_mode: str = "paper_m0", method: str = "tilted",
                          max_step_retries: int = 100,
                          seed_info: str = "") -> PathSample:
    """Two-step sampler for exceedance conditioning {U_{1,n} > n a}.

    First draws the randomized level S from the overshoot law
    S = a + E/(n t) with t = m^{-1}(a) (the truncated variant when event.c is
    finite), then samples a point-conditioned path at u_total = n S.
    """
    validate_event(model, event)
    if event.kind != "ExceedanceSet":
        raise ConfigError("sample_large_set_path takes an ExceedanceSet event")
    n = event.n
    t_a = solve_tilt(model, event.a)
    rate = n * t_a
    if event.c is None:
        s_level = event.a + rng.standard_exponential() / rate
    else:
        u = rng.random()
        s_level = event.a - math.log1p(-u * (1.0 - math.exp(-rate * event.c))) / rate
    point = PointFunctional(u_total=n * s_level, n=n)
    ps = sample_path(model, point, k, rng, shift_mode=shift_mode, method=method,
                     max_step_retries=max_step_retries, seed_info=seed_info)
    return replace(ps, randomized_level=s_level)


def sample_large_set_batch(model: Model, event, k: int, L: int, rng,
                           shift_mode: str = "paper_m0",
                           max_step_retries: int = 100,
                           max_proposals: int = 1_000_000) -> dict:
    """Batched two-step exceedance sampler (one stream, L rows).

    Draws all L randomized levels first, then runs the batched path sampler
    with per-row totals.  Adds "levels" (L,) to the sample_path_batch output.
    """
    validate_event(model, event)
    if event.kind != "ExceedanceSet":
        raise ConfigError("sample_large_set_batch takes an ExceedanceSet event")
    n = event.n
    t_a = solve_tilt(model, event.a)
    rate = n * t_a
    if event.c is None:
        levels = event.a + rng.standard_exponential(L) / rate
    else:
        u = rng.random(L)
        levels = event.a - np.log1p(-u * (1.0 - math.exp(-rate * event.c))) / rate
    point = PointFunctional(u_total=float(n * levels[0]), n=n)
    out = sample_path_batch(model, point, k, L, rng, shift_mode=shift_mode,
                            max_step_retries=max_step_retries,
                            max_proposals=max_proposals, u_totals=n * levels)
    out["levels"] = levels
    return out
