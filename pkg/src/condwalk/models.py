"""Model abstraction: base density, conditioning map u, and tilted families.

A Model bundles a univariate base density p_X, a conditioning map u (the walk
is conditioned on sums of u(X_i)), and the cumulant generating function of
u(X),

    cgf(t) = log E exp(t u(X)),   t in the open interval t_domain,

together with its first four derivatives.  Writing m(t), s2(t), mu3(t), mu4(t)
for those derivatives, the exponentially tilted family

    pi_t(x) = p_X(x) exp(t u(x) - cgf(t))

has mean of u equal to m(t) and variance s2(t); m is strictly increasing, so
the tilt pinning the mean of u(X) at any attainable level alpha is the unique
root of m(t) = alpha (solve_tilt).

Built-in models cover the standard normal, the centered unit exponential
(X = E - 1), the Gamma(rho, theta) family, and the standard normal conditioned
through u(x) = x^2 (so u(X) is chi-square with one degree of freedom).  All
four admit closed-form cgfs and closed-form tilted samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import DomainError, NoConvergence, RangeError

__all__ = [
    "CumulantProfile",
    "Model",
    "cumulants_at",
    "solve_tilt",
    "solve_tilt_many",
    "tilted_logpdf",
    "newton_tilt_step",
    "hermite",
    "standard_normal",
    "centered_exponential",
    "gamma_model",
    "normal_usquare",
    "builtin_model",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CumulantProfile:
    """Cumulants of u(X) under the tilted law at parameter t."""

    t: float
    m: float
    s2: float
    mu3: float
    mu4: float


@dataclass(frozen=True)
class Model:
    """Immutable model definition; safe to share across workers.

    Evaluators accept scalars or numpy arrays.  x_support is the support of X
    itself, u_support the attainable range of u(X); they coincide when
    is_identity.  x_bulk is a finite window holding all but ~1e-15 of the base
    mass, used only to seed quadrature windows.  sampler_tilted and
    log_modulated_integral are optional closed-form accelerators; generic
    numeric fallbacks are used when absent.
    """

    name: str
    base_logpdf: Callable
    u_map: Callable
    is_identity: bool
    cgf: Callable
    cgf_d1: Callable
    cgf_d2: Callable
    cgf_d3: Callable
    cgf_d4: Callable
    t_domain: tuple
    u_support: tuple
    x_support: tuple
    x_bulk: tuple
    sampler_base: Callable
    sampler_tilted: Optional[Callable] = None
    log_modulated_integral: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def in_t_domain(self, t):
        lo, hi = self.t_domain
        return np.logical_and(np.asarray(t) > lo, np.asarray(t) < hi)

    def clamp_tilt(self, t: float) -> float:
        """Pull t strictly inside t_domain (safety margin relative to the gap)."""
        lo, hi = self.t_domain
        if math.isfinite(hi) and t >= hi:
            t = hi - 1e-9 * max(1.0, abs(hi))
        if math.isfinite(lo) and t <= lo:
            t = lo + 1e-9 * max(1.0, abs(lo))
        return t


def cumulants_at(model: Model, t: float) -> CumulantProfile:
    """Profile (t, m, s2, mu3, mu4) of the tilted law at t."""
    if not np.all(model.in_t_domain(t)):
        raise DomainError(f"t={t} outside t_domain={model.t_domain} of model {model.name}")
    return CumulantProfile(
        t=float(t),
        m=float(model.cgf_d1(t)),
        s2=float(model.cgf_d2(t)),
        mu3=float(model.cgf_d3(t)),
        mu4=float(model.cgf_d4(t)),
    )


def tilted_logpdf(model: Model, t, x):
    """log pi_t(x) = log p_X(x) + t*u(x) - cgf(t)."""
    if not np.all(model.in_t_domain(t)):
        raise DomainError(f"t={t} outside t_domain={model.t_domain} of model {model.name}")
    return model.base_logpdf(x) + t * model.u_map(x) - model.cgf(t)


def newton_tilt_step(t_i: float, m_target_next: float, m_i: float, s2_i: float) -> float:
    """One-step linearization of the tilt recursion: t + (m_target - m)/s2.

    Cheap warm start for solve_tilt when consecutive targets are close.
    """
    return t_i + (m_target_next - m_i) / s2_i


def hermite(order: int, x):
    """Hermite polynomials H3, H4, H6 in the convention used throughout:

    H3(x) = x^3 - 3x, H4(x) = x^4 + 6x^2 - 3, H6(x) = x^6 - 15x^4 + 45x^2 - 15.
    """
    x = np.asarray(x, dtype=float)
    x2 = x * x
    if order == 3:
        out = x * (x2 - 3.0)
    elif order == 4:
        out = x2 * (x2 + 6.0) - 3.0
    elif order == 6:
        out = x2 * (x2 * (x2 - 15.0) + 45.0) - 15.0
    else:
        raise DomainError(f"hermite order must be 3, 4 or 6, got {order}")
    return out if out.ndim else float(out)


def _edge_sequence(start: float, edge: float):
    """Points marching from start toward edge (never reaching an open edge)."""
    t = start
    for j in range(200):
        if math.isfinite(edge):
            t = edge - 0.5 * (edge - t)
        else:
            step = 2.0 ** min(j, 60)
            t = start + step if edge > start else start - step
        yield t


def solve_tilt(model: Model, alpha: float, tol: float = 1e-10) -> float:
    """Unique t with m(t) = alpha, to |m(t) - alpha| <= tol*max(1, |alpha|).

    Safeguarded Newton: a sign-changing bracket is grown toward the t_domain
    edges first, then Newton steps (slope s2) are clamped into the bracket
    with bisection fallback.
    """
    lo_u, hi_u = model.u_support
    if not (lo_u < alpha < hi_u):
        raise RangeError(
            f"alpha={alpha} outside attainable range {model.u_support} of model {model.name}"
        )
    d1, d2 = model.cgf_d1, model.cgf_d2
    t_lo_dom, t_hi_dom = model.t_domain

    with np.errstate(over="ignore", invalid="ignore"):
        t0 = 0.0
        m0 = float(d1(t0))
        if m0 == alpha:
            return t0
        if m0 < alpha:
            b_lo, b_hi = t0, None
            for t in _edge_sequence(t0, t_hi_dom):
                mt = float(d1(t))
                if math.isfinite(mt) and mt >= alpha:
                    b_hi = t
                    break
                if math.isfinite(mt):
                    b_lo = t
            if b_hi is None:
                raise RangeError(f"alpha={alpha} not bracketed toward t_hi for {model.name}")
        else:
            b_hi, b_lo = t0, None
            for t in _edge_sequence(t0, t_lo_dom):
                mt = float(d1(t))
                if math.isfinite(mt) and mt <= alpha:
                    b_lo = t
                    break
                if math.isfinite(mt):
                    b_hi = t
            if b_lo is None:
                raise RangeError(f"alpha={alpha} not bracketed toward t_lo for {model.name}")

        t = 0.5 * (b_lo + b_hi)
        target_tol = tol * max(1.0, abs(alpha))
        for _ in range(200):
            mt = float(d1(t))
            if math.isfinite(mt):
                if abs(mt - alpha) <= target_tol:
                    return t
                if mt > alpha:
                    b_hi = t
                else:
                    b_lo = t
                step = (alpha - mt) / float(d2(t))
                t_new = t + step
            else:
                t_new = math.nan
            if not (b_lo < t_new < b_hi) or not math.isfinite(t_new):
                t_new = 0.5 * (b_lo + b_hi)
            t = t_new
    raise NoConvergence(
        f"solve_tilt({model.name}, alpha={alpha}) did not reach tol={tol}; bracket=({b_lo},{b_hi})"
    )


def solve_tilt_many(model: Model, alpha, tol: float = 1e-10, warm_start=None,
                    linear=None):
    """Vectorized solve_tilt.

    Returns (t, ok): ok marks entries whose alpha lies strictly inside
    u_support and for which the iteration met tolerance; t is NaN where not ok.
    Used by batch evaluators that discard out-of-range paths instead of
    raising.

    With linear = lam (an array of nonnegative reals broadcastable to alpha)
    the equation solved is m(t) + lam*t = alpha instead; the left side is
    still strictly increasing in t and covers all of R when lam > 0, so every
    finite alpha is then reachable.  Samplers use this to place acceptance-
    rejection proposals.
    """
    alpha = np.asarray(alpha, dtype=float)
    if linear is None:
        lam = None
        lo_u, hi_u = model.u_support
        ok = (alpha > lo_u) & (alpha < hi_u) & np.isfinite(alpha)
    else:
        lam = np.broadcast_to(np.asarray(linear, dtype=float), alpha.shape)
        ok = np.isfinite(alpha) & (lam > 0)
    t = np.where(ok, 0.0 if warm_start is None else warm_start, np.nan)
    t = np.asarray(t, dtype=float).copy()
    t[ok & ~np.asarray(model.in_t_domain(t))] = 0.0

    if lam is None:
        d1, d2 = model.cgf_d1, model.cgf_d2
    else:
        d1 = lambda x: model.cgf_d1(x) + lam * x
        d2 = lambda x: model.cgf_d2(x) + lam
    t_lo_dom, t_hi_dom = model.t_domain
    target_tol = tol * np.maximum(1.0, np.abs(alpha))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m_t = np.where(ok, d1(t), np.nan)
        b_lo = np.where(m_t <= alpha, t, -np.inf)
        b_hi = np.where(m_t >= alpha, t, np.inf)

        # grow missing bracket ends toward the domain edges
        for j in range(200):
            need_hi = ok & np.isinf(b_hi) & (b_hi > 0)
            need_lo = ok & np.isinf(b_lo) & (b_lo < 0)
            if not (need_hi.any() or need_lo.any()):
                break
            if need_hi.any():
                cur = np.where(np.isfinite(b_lo), b_lo, 0.0)
                if math.isfinite(t_hi_dom):
                    cand = t_hi_dom - 0.5 ** (j + 1) * (t_hi_dom - cur)
                else:
                    cand = cur + 2.0 ** min(j, 60)
                m_c = d1(cand)
                done = need_hi & np.isfinite(m_c) & (m_c >= alpha)
                b_hi[done] = cand[done]
                adv = need_hi & np.isfinite(m_c) & (m_c < alpha)
                b_lo[adv] = cand[adv]
            if need_lo.any():
                cur = np.where(np.isfinite(b_hi), b_hi, 0.0)
                if math.isfinite(t_lo_dom):
                    cand = t_lo_dom + 0.5 ** (j + 1) * (cur - t_lo_dom)
                else:
                    cand = cur - 2.0 ** min(j, 60)
                m_c = d1(cand)
                done = need_lo & np.isfinite(m_c) & (m_c <= alpha)
                b_lo[done] = cand[done]
                adv = need_lo & np.isfinite(m_c) & (m_c > alpha)
                b_hi[adv] = cand[adv]
        ok &= np.isfinite(b_lo) & np.isfinite(b_hi)

        t = np.where(ok, np.clip(t, b_lo, b_hi), np.nan)
        active = ok.copy()
        for _ in range(200):
            if not active.any():
                break
            m_t = np.where(active, d1(t), 0.0)
            resid = m_t - alpha
            hit = active & (np.abs(resid) <= target_tol)
            active &= ~hit
            if not active.any():
                break
            up = active & (resid > 0)
            dn = active & (resid < 0)
            b_hi[up] = t[up]
            b_lo[dn] = t[dn]
            t_new = t - resid / d2(t)
            bad = active & (~np.isfinite(t_new) | (t_new <= b_lo) | (t_new >= b_hi))
            t_new[bad] = 0.5 * (b_lo[bad] + b_hi[bad])
            t[active] = t_new[active]
        else:
            pass

        m_t = np.where(ok, d1(t), np.nan)
        ok &= np.abs(m_t - alpha) <= target_tol
        t[~ok] = np.nan
    return t, ok


# ----------------------------------------------------------------------------
# built-in models
# ----------------------------------------------------------------------------


def standard_normal() -> Model:
    """Standard normal base law, identity conditioning map."""
    return Model(
        name="normal",
        base_logpdf=lambda x: -0.5 * np.asarray(x, dtype=float) ** 2 - 0.5 * _LOG_2PI,
        u_map=lambda x: np.asarray(x, dtype=float),
        is_identity=True,
        cgf=lambda t: 0.5 * np.asarray(t, dtype=float) ** 2,
        cgf_d1=lambda t: np.asarray(t, dtype=float),
        cgf_d2=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        cgf_d3=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        cgf_d4=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        t_domain=(-np.inf, np.inf),
        u_support=(-np.inf, np.inf),
        x_support=(-np.inf, np.inf),
        x_bulk=(-9.5, 9.5),
        sampler_base=lambda rng, size=None: rng.standard_normal(size),
        sampler_tilted=lambda t, rng, size=None: rng.standard_normal(size) + t,
        log_modulated_integral=lambda M, beta: -0.5 * M * M / (1.0 + beta)
        - 0.5 * np.log(2.0 * np.pi * (1.0 + beta)),
    )


def _cexp_logpdf(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x > -1.0, -(x + 1.0), -np.inf)
    return out if out.ndim else float(out)


def centered_exponential() -> Model:
    """Centered unit exponential X = E - 1 on (-1, inf); cgf(t) = -t - log(1-t)."""

    def _log_mod(M, beta):
        # int_{-1}^inf e^{-(x+1)} n(M, beta, x) dx, completed square
        M = np.asarray(M, dtype=float)
        beta = np.asarray(beta, dtype=float)
        return 0.5 * beta - M - 1.0 + special.log_ndtr((M - beta + 1.0) / np.sqrt(beta))

    return Model(
        name="centered_exponential",
        base_logpdf=_cexp_logpdf,
        u_map=lambda x: np.asarray(x, dtype=float),
        is_identity=True,
        cgf=lambda t: -np.asarray(t, dtype=float) - np.log1p(-np.asarray(t, dtype=float)),
        cgf_d1=lambda t: np.asarray(t, dtype=float) / (1.0 - np.asarray(t, dtype=float)),
        cgf_d2=lambda t: (1.0 - np.asarray(t, dtype=float)) ** -2,
        cgf_d3=lambda t: 2.0 * (1.0 - np.asarray(t, dtype=float)) ** -3,
        cgf_d4=lambda t: 6.0 * (1.0 - np.asarray(t, dtype=float)) ** -4,
        t_domain=(-np.inf, 1.0),
        u_support=(-1.0, np.inf),
        x_support=(-1.0, np.inf),
        x_bulk=(-1.0, 40.0),
        sampler_base=lambda rng, size=None: rng.exponential(1.0, size) - 1.0,
        sampler_tilted=lambda t, rng, size=None: rng.exponential(1.0 / (1.0 - t), size) - 1.0,
        log_modulated_integral=_log_mod,
    )


def gamma_model(rho: float, theta: float) -> Model:
    """Gamma(shape rho, scale theta) base law, identity map; cgf = -rho log(1 - theta t)."""
    if rho <= 0 or theta <= 0:
        raise DomainError(f"gamma_model needs rho>0 and theta>0, got rho={rho}, theta={theta}")
    lg = special.gammaln(rho)

    def _logpdf(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(
                x > 0.0,
                (rho - 1.0) * np.log(np.where(x > 0, x, 1.0)) - x / theta - rho * math.log(theta) - lg,
                -np.inf,
            )
        return out if out.ndim else float(out)

    return Model(
        name="gamma",
        base_logpdf=_logpdf,
        u_map=lambda x: np.asarray(x, dtype=float),
        is_identity=True,
        cgf=lambda t: -rho * np.log1p(-theta * np.asarray(t, dtype=float)),
        cgf_d1=lambda t: rho * theta / (1.0 - theta * np.asarray(t, dtype=float)),
        cgf_d2=lambda t: rho * theta**2 * (1.0 - theta * np.asarray(t, dtype=float)) ** -2,
        cgf_d3=lambda t: 2.0 * rho * theta**3 * (1.0 - theta * np.asarray(t, dtype=float)) ** -3,
        cgf_d4=lambda t: 6.0 * rho * theta**4 * (1.0 - theta * np.asarray(t, dtype=float)) ** -4,
        t_domain=(-np.inf, 1.0 / theta),
        u_support=(0.0, np.inf),
        x_support=(0.0, np.inf),
        x_bulk=(0.0, theta * (rho + 40.0 * math.sqrt(rho) + 40.0)),
        sampler_base=lambda rng, size=None: rng.gamma(rho, theta, size),
        sampler_tilted=lambda t, rng, size=None: rng.gamma(rho, theta / (1.0 - theta * t), size),
        params={"rho": rho, "theta": theta},
    )


def normal_usquare() -> Model:
    """Standard normal base law with u(x) = x^2, so u(X) is chi-square(1)."""
    return Model(
        name="normal_usquare",
        base_logpdf=lambda x: -0.5 * np.asarray(x, dtype=float) ** 2 - 0.5 * _LOG_2PI,
        u_map=lambda x: np.asarray(x, dtype=float) ** 2,
        is_identity=False,
        cgf=lambda t: -0.5 * np.log1p(-2.0 * np.asarray(t, dtype=float)),
        cgf_d1=lambda t: (1.0 - 2.0 * np.asarray(t, dtype=float)) ** -1,
        cgf_d2=lambda t: 2.0 * (1.0 - 2.0 * np.asarray(t, dtype=float)) ** -2,
        cgf_d3=lambda t: 8.0 * (1.0 - 2.0 * np.asarray(t, dtype=float)) ** -3,
        cgf_d4=lambda t: 48.0 * (1.0 - 2.0 * np.asarray(t, dtype=float)) ** -4,
        t_domain=(-np.inf, 0.5),
        u_support=(0.0, np.inf),
        x_support=(-np.inf, np.inf),
        x_bulk=(-9.5, 9.5),
        sampler_base=lambda rng, size=None: rng.standard_normal(size),
        sampler_tilted=lambda t, rng, size=None: rng.standard_normal(size)
        / np.sqrt(1.0 - 2.0 * t),
    )


_BUILTINS = {
    "normal": standard_normal,
    "centered_exponential": centered_exponential,
    "gamma": gamma_model,
    "normal_usquare": normal_usquare,
}


def builtin_model(name: str, **params) -> Model:
    """Construct a built-in model by name ('gamma' takes rho and theta)."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown built-in model '{name}'; known: {sorted(_BUILTINS)}")
    return factory(**params)
