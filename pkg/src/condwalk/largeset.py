"""Exceedance-set conditioning: rate function, saddlepoint tails, the set
mass function M(t), the overshoot law of the conditioned mean, and the
mixture density g_nA obtained by integrating the point approximation over the
overshoot.

The conditioned mean S = U_{1,n}/n given {U_{1,n} > n a} is close in law to
a + Exp(n t)/n with t = m^{-1}(a); conditioning the walk on the set therefore
splits into (i) drawing the level S from that (possibly truncated)
exponential and (ii) running the point scheme at u_total = n S.  The mixture
density below is the exact integral of the point density against the
truncated overshoot law, evaluated by Gauss-Legendre quadrature in the
log domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .conditioning import ExceedanceSet, PointFunctional, eval_log_g_batch
from .errors import DomainError, IntegrationFailure, RangeError
from .models import Model, solve_tilt

__all__ = [
    "RateFunction",
    "HalfLine",
    "Interval",
    "rate",
    "log_tail_prob",
    "set_density_M",
    "set_density_M_n",
    "overshoot_logpdf",
    "default_truncation",
    "eval_log_g_nA",
    "eval_log_g_nA_batch",
    "condition_v_report",
]


def rate(model: Model, x: float) -> float:
    """Large-deviation rate I_U(x) = x m^{-1}(x) - cgf(m^{-1}(x)).

    Zero at the base mean m(0), nonnegative and convex on the attainable
    range.  RangeError outside it.
    """
    t = solve_tilt(model, x)
    return t * x - float(model.cgf(t))


@dataclass(frozen=True)
class RateFunction:
    """Callable wrapper around rate() bound to one model."""

    model: Model

    def __call__(self, x: float) -> float:
        return rate(self.model, x)


def log_tail_prob(model: Model, n: int, a: float) -> float:
    """Saddlepoint log of P(U_{1,n}/n > a) for a above the mean:

        -n I_U(a) - (1/2) log(2 pi n) - log(t_a s(t_a)),  t_a = m^{-1}(a).

    Relative error on the probability is O(1/sqrt(n)).
    """
    if n < 1:
        raise DomainError(f"log_tail_prob needs n >= 1, got {n}")
    mean0 = float(model.cgf_d1(0.0))
    if not a > mean0:
        raise RangeError(f"tail level a={a} must exceed the base mean {mean0}")
    t_a = solve_tilt(model, a)
    s_a = math.sqrt(float(model.cgf_d2(t_a)))
    return -n * rate(model, a) - 0.5 * math.log(2.0 * math.pi * n) - math.log(t_a * s_a)


@dataclass(frozen=True)
class HalfLine:
    """The set (a, infinity)."""

    a: float


@dataclass(frozen=True)
class Interval:
    """The set (a, b), a < b."""

    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise DomainError(f"Interval needs b > a, got ({self.a}, {self.b})")


def set_density_M(set_descriptor, t: float) -> float:
    """M(t) = t * integral over (A - essinf A) of exp(-t y) dy, for t > 0.

    HalfLine gives 1 for every t; Interval(a, b) gives 1 - exp(-t (b - a)).
    Always in [0, 1].
    """
    if not t > 0:
        raise DomainError(f"set_density_M needs t > 0, got {t}")
    if isinstance(set_descriptor, HalfLine):
        return 1.0
    if isinstance(set_descriptor, Interval):
        return float(-np.expm1(-t * (set_descriptor.b - set_descriptor.a)))
    raise DomainError(f"unknown set descriptor {set_descriptor!r}")


def set_density_M_n(set_descriptor, n: int, t: float) -> float:
    """M_n(t) = M(n t) / t; equals 1/t for half-lines (the thin/thick split)."""
    return set_density_M(set_descriptor, n * t) / t


def overshoot_logpdf(model: Model, n: int, a: float, v: float,
                     c: Optional[float] = None) -> float:
    """Log-density of the conditioned mean S = U_{1,n}/n given {S > a}:

        n t exp(-n t (v - a)) on (a, inf),  t = m^{-1}(a),

    truncated to (a, a + c) (divide by 1 - exp(-n t c)) when c is finite.
    """
    mean0 = float(model.cgf_d1(0.0))
    if not a > mean0:
        raise RangeError(f"threshold a={a} must exceed the base mean {mean0}")
    if v <= a:
        raise DomainError(f"overshoot level v={v} must exceed a={a}")
    if c is not None:
        if not c > 0:
            raise DomainError(f"truncation width c={c} must be positive")
        if v >= a + c:
            raise DomainError(f"overshoot level v={v} must lie below a+c={a + c}")
    t = solve_tilt(model, a)
    lp = math.log(n * t) - n * t * (v - a)
    if c is not None:
        lp -= math.log(-math.expm1(-n * t * c))
    return lp


def default_truncation(model: Model, n: int, a: float) -> float:
    """Width c with n m^{-1}(a) c = 20: mixture mass beyond a+c is ~ e^-20."""
    return 20.0 / (n * solve_tilt(model, a))


@lru_cache(maxsize=64)
def _gl_nodes(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


def _check_condition_c(n: int, k: int, c: float):
    nc = n * c
    if nc / (n - k) > 10.0:
        warnings.warn(
            f"truncation width violates the thin-mixture condition: "
            f"n*c/(n-k) = {nc / (n - k):.3g} > 10", stacklevel=3)
    if nc < 10.0:
        warnings.warn(
            f"truncation width violates the mass condition: n*c = {nc:.3g} < 10",
            stacklevel=3)


def eval_log_g_nA_batch(model: Model, event: ExceedanceSet, paths,
                        quad_points: int = 32, shift_mode: str = "paper_m0"):
    """Mixture log-density of the first k steps given the exceedance set,
    for an (L, k) batch.  Returns (log_g_nA, ok).

    g_nA(y) = n t / (1 - e^{-n t c}) * int_a^{a+c} g_{nv}(y) e^{-n t (v-a)} dv

    with t = m^{-1}(a), evaluated with quad_points Gauss-Legendre nodes and a
    log-sum-exp combination.  Rows impossible at every node come back not-ok
    (log -inf); all rows impossible raises IntegrationFailure.
    """
    if event.kind != "ExceedanceSet":
        raise DomainError("eval_log_g_nA takes an ExceedanceSet event")
    n, a = event.n, event.a
    mean0 = float(model.cgf_d1(0.0))
    if not a > mean0:
        raise RangeError(f"threshold a={a} must exceed the base mean {mean0}")
    t = solve_tilt(model, a)
    c = event.c if event.c is not None else default_truncation(model, n, a)
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    L, k = paths.shape
    _check_condition_c(n, k, c)
    lo_u, hi_u = model.u_support
    if not a + c < hi_u:
        raise RangeError(f"a + c = {a + c} leaves the attainable range (max {hi_u})")

    x, w = _gl_nodes(quad_points)
    v = a + 0.5 * c * (x + 1.0)  # nodes in (a, a+c)
    half_width = 0.5 * c

    tiled = np.repeat(paths, quad_points, axis=0)            # (L*Q, k)
    totals = np.tile(n * v, L)                                # row-major blocks
    dummy = PointFunctional(u_total=float(n * v[0]), n=n)
    log_g, ok_rows, _ = eval_log_g_batch(model, dummy, tiled, shift_mode=shift_mode,
                                         u_totals=totals)
    log_g = log_g.reshape(L, quad_points)
    ok_rows = ok_rows.reshape(L, quad_points)

    log_kernel = np.log(n * t) - n * t * (v - a) - math.log(-math.expm1(-n * t * c))
    terms = np.where(ok_rows, log_g + log_kernel + np.log(w * half_width), -np.inf)
    top = terms.max(axis=1)
    # zero density at every node (top = -inf) is impossible too
    ok = ok_rows.any(axis=1) & np.isfinite(top)
    if not ok.any():
        raise IntegrationFailure(
            f"every quadrature node is an impossible path for all {L} rows "
            f"(a={a}, c={c}, k={k})")
    safe_top = np.where(ok, top, 0.0)
    with np.errstate(divide="ignore"):
        out = safe_top + np.log(np.sum(np.exp(terms - safe_top[:, None]), axis=1))
    return np.where(ok, out, -np.inf), ok


def eval_log_g_nA(model: Model, event: ExceedanceSet, k: int, path,
                  quad_points: int = 32, shift_mode: str = "paper_m0") -> float:
    """Scalar mixture log-density of one path of length k (see the batch form).

    Raises RangeError when the path is impossible at every node.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 1 or path.shape[0] != k:
        raise DomainError(f"path must be a length-{k} vector, got shape {path.shape}")
    try:
        out, ok = eval_log_g_nA_batch(model, event, path[None, :],
                                      quad_points=quad_points, shift_mode=shift_mode)
    except IntegrationFailure:
        raise RangeError("path is impossible at every overshoot level in (a, a+c)")
    if not ok[0]:
        raise RangeError("path is impossible at every overshoot level in (a, a+c)")
    return float(out[0])


def condition_v_report(model: Model, a: float, n_values=(1, 4, 16, 64, 256),
                       quad_points: int = 48) -> dict:
    """Numeric check of the variance-function condition:

        sup_n sqrt(n) int_a^inf V'(v) exp(-n m^{-1}(a) (v-a)) dv < inf,
        V(v) = s^2(m^{-1}(v)),  V'(v) = mu3(t)/s^2(t) at t = m^{-1}(v).

    Evaluated by Gauss-Laguerre after v = a + s/(n t_a).  Reported, not
    enforced: the dict carries the per-n values and a heuristic verdict
    (decreasing tail of the sequence).
    """
    t_a = solve_tilt(model, a)
    s_nodes, s_weights = np.polynomial.laguerre.laggauss(quad_points)
    lo_u, hi_u = model.u_support
    values = {}
    for n in n_values:
        scale = 1.0 / (n * t_a)
        v = a + s_nodes * scale
        inside = (v > lo_u) & (v < hi_u)
        vt = np.array([solve_tilt(model, float(x)) for x in v[inside]])
        vprime = np.asarray(model.cgf_d3(vt), dtype=float) / np.asarray(
            model.cgf_d2(vt), dtype=float)
        integral = float(np.sum(s_weights[inside] * vprime) * scale)
        values[int(n)] = math.sqrt(n) * integral
    vals = list(values.values())
    return {
        "a": a,
        "t_a": t_a,
        "values": values,
        "sup_observed": max(vals),
        "bounded": bool(abs(vals[-1]) <= abs(vals[0]) + 1e-9 or abs(vals[-1]) <= 1e-9),
    }
