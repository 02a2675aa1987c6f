"""Independent reference computations used by the test suite.

Everything here is either a closed form, a direct grid convolution, or
brute-force rejection sampling.  None of it goes through the conditioned-walk
approximation or its samplers, so agreement between the two sides is
evidence, not circularity.  The only shared dependency is the model registry
(densities, cgf derivatives, base samplers).

Conventions: path arguments accept a single path of shape (k,) or a batch
(L, k); scalar paths raise SupportError where the density is zero, batches
return -inf rows instead so callers can mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, GridTooCoarse, NoConvergence, SupportError
from .models import Model, solve_tilt

__all__ = [
    "OracleResult",
    "gaussian_conditional_logpdf",
    "gaussian_conditional_sample",
    "exponential_conditional_logpdf",
    "exponential_conditional_sample",
    "mean_density_by_convolution",
    "gamma_tail_exact",
    "rejection_point_sample",
    "rejection_exceedance_sample",
]


@dataclass(frozen=True)
class OracleResult:
    """A reference value with its provenance and an error estimate."""

    log_value: float
    method: str  # closed_form | grid_convolution | rejection
    error_estimate: float
    grid_spacing: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("closed_form", "grid_convolution", "rejection"):
            raise DomainError(f"unknown oracle method {self.method!r}")
        if not self.error_estimate >= 0.0:
            raise DomainError("error_estimate must be >= 0")


def _as_batch(path):
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise DomainError(f"path must be (k,) or (L, k), got shape {arr.shape}")


# ---------------------------------------------------------------------------
# exact conditional laws


def gaussian_conditional_logpdf(a: float, n: int, path):
    """Exact log-density of (X_1..X_k) | S_{1,n} = n a for i.i.d. N(0,1).

    Sequential factorization: given s_i = y_1 + .. + y_i, the next coordinate
    is N((n a - s_i)/(n - i), (n - i - 1)/(n - i)).
    """
    y, single = _as_batch(path)
    k = y.shape[1]
    if not 0 < k < n:
        raise DomainError(f"need 0 < k < n, got k={k}, n={n}")
    s_prev = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(y, axis=1)[:, :-1]],
                            axis=1)
    i = np.arange(k, dtype=float)
    mean = (n * a - s_prev) / (n - i)
    var = (n - i - 1.0) / (n - i)
    out = np.sum(-0.5 * ((y - mean) ** 2 / var + np.log(2.0 * math.pi * var)),
                 axis=1)
    return float(out[0]) if single else out


def gaussian_conditional_sample(a: float, n: int, k: int, L: int, rng) -> np.ndarray:
    """Draw L exact paths of the first k coordinates given S_{1,n} = n a."""
    if not 0 < k < n:
        raise DomainError(f"need 0 < k < n, got k={k}, n={n}")
    out = np.empty((L, k))
    s = np.zeros(L)
    for i in range(k):
        mean = (n * a - s) / (n - i)
        sd = math.sqrt((n - i - 1.0) / (n - i))
        out[:, i] = mean + sd * rng.standard_normal(L)
        s += out[:, i]
    return out


def exponential_conditional_logpdf(a: float, n: int, path):
    """Exact log-density of (X_1..X_k) | S_{1,n} = n a for centered unit
    exponentials (X = E - 1), the Dirichlet/order-statistics conditional.

    With T = n(1+a) and W = sum(y_i + 1):
        log[(n-1)!/(n-k-1)!] + (n-k-1) log(T - W) - (n-1) log T.
    """
    if not a > -1.0:
        raise DomainError(f"need a > -1 for a positive total, got a={a}")
    y, single = _as_batch(path)
    k = y.shape[1]
    if not 0 < k < n:
        raise DomainError(f"need 0 < k < n, got k={k}, n={n}")
    T = n * (1.0 + a)
    W = np.sum(y + 1.0, axis=1)
    bad = np.any(y <= -1.0, axis=1) | (W >= T)
    if single and bad[0]:
        raise SupportError(
            f"path outside the support: requires y_i > -1 and sum(y_i+1) < {T}")
    gap = np.where(bad, 1.0, T - W)
    out = (math.lgamma(n) - math.lgamma(n - k)
           + (n - k - 1.0) * np.log(gap) - (n - 1.0) * math.log(T))
    out = np.where(bad, -np.inf, out)
    return float(out[0]) if single else out


def exponential_conditional_sample(a: float, n: int, k: int, L: int,
                                   rng) -> np.ndarray:
    """Draw L exact paths of the first k coordinates given S_{1,n} = n a,
    via the Dirichlet representation Y_i = T E_i / sum(E) - 1."""
    if not 0 < k < n:
        raise DomainError(f"need 0 < k < n, got k={k}, n={n}")
    if not a > -1.0:
        raise DomainError(f"need a > -1, got a={a}")
    T = n * (1.0 + a)
    e = rng.standard_exponential((L, n))
    return T * e[:, :k] / e.sum(axis=1, keepdims=True) - 1.0


# ---------------------------------------------------------------------------
# grid convolution

_MAX_GRID = 2 ** 14


def mean_density_by_convolution(model: Model, n: int, u: float,
                                grid_spec: Optional[dict] = None) -> OracleResult:
    """Density of (X_1 + .. + X_n)/n at u by direct n-fold self-convolution
    of the base density on a uniform grid (O(G^2) summation, no transforms).

    grid_spec keys (all optional): lo, hi, points (<= 2^14), tol (relative
    grid-halving tolerance, default 1e-3).  error_estimate is the relative
    change under grid halving; GridTooCoarse when it exceeds tol.
    """
    if not 1 <= n <= 8:
        raise DomainError(f"convolution oracle is for 1 <= n <= 8, got n={n}")
    if not model.is_identity:
        raise DomainError("convolution oracle requires u(x) = x")
    if n == 1:  # the 1-fold convolution is the base density itself
        return OracleResult(log_value=float(model.base_logpdf(u)),
                            method="closed_form", error_estimate=0.0)
    spec = dict(grid_spec or {})
    m0 = float(model.cgf_d1(0.0))
    sd = math.sqrt(float(model.cgf_d2(0.0)))
    lo_x, hi_x = model.x_support
    lo = float(spec.get("lo", max(lo_x, m0 - 15.0 * sd)))
    hi = float(spec.get("hi", min(hi_x, m0 + 15.0 * sd)))
    G = int(spec.get("points", 2 ** 13))
    tol = float(spec.get("tol", 1e-3))
    if not lo < hi:
        raise DomainError(f"empty grid window [{lo}, {hi}]")
    if not 8 <= G <= _MAX_GRID:
        raise DomainError(f"points must be in [8, {_MAX_GRID}], got {G}")

    def value(points: int) -> float:
        h = (hi - lo) / points
        x = lo + (np.arange(points) + 0.5) * h  # midpoint grid
        f = np.exp(np.asarray(model.base_logpdf(x), dtype=float))
        conv = f
        for _ in range(n - 1):
            conv = np.convolve(conv, f) * h
        # sum grid: s_m = n lo + (m + n/2) h, m = 0 .. n(points-1)
        s = n * u
        pos = (s - n * lo) / h - 0.5 * n
        j = int(math.floor(pos))
        if j < 0 or j + 1 >= conv.size:
            return 0.0
        w = pos - j
        f_sum = (1.0 - w) * conv[j] + w * conv[j + 1]
        return n * max(f_sum, 0.0)

    v = value(G)
    v_half = value(G // 2)
    scale = max(abs(v), abs(v_half), 1e-300)
    err = abs(v - v_half) / scale
    if err > tol:
        raise GridTooCoarse(
            f"grid halving moved the value by {err:.2e} > tol {tol:.2e} "
            f"(G={G}, window [{lo}, {hi}])")
    log_value = math.log(v) if v > 0.0 else -math.inf
    return OracleResult(log_value=log_value, method="grid_convolution",
                        error_estimate=err, grid_spacing=(hi - lo) / G)


# ---------------------------------------------------------------------------
# Gamma tail


def gamma_tail_exact(n: int, a: float, tol: float = 1e-14,
                     max_iter: int = 10 ** 5) -> float:
    """log P(S_{1,n} > n a) for the centered exponential model, i.e.
    log Q(n, n(1+a)) with Q the upper regularized incomplete gamma,
    evaluated by a Lentz continued fraction / power series pair."""
    if not n >= 1:
        raise DomainError(f"need n >= 1, got n={n}")
    if not a > 0.0:
        raise DomainError(f"need a > 0, got a={a}")
    s = float(n)
    x = n * (1.0 + a)
    if x > s + 1.0:
        # Q(s,x) = e^{-x + s log x - lgamma(s)} * h, h from Lentz's method
        tiny = 1e-300
        b = x + 1.0 - s
        c = 1.0 / tiny
        d = 1.0 / b
        h = d
        for i in range(1, max_iter + 1):
            an = -i * (i - s)
            b += 2.0
            d = an * d + b
            if abs(d) < tiny:
                d = tiny
            c = b + an / c
            if abs(c) < tiny:
                c = tiny
            d = 1.0 / d
            delta = d * c
            h *= delta
            if abs(delta - 1.0) < tol:
                return -x + s * math.log(x) - math.lgamma(s) + math.log(h)
        raise NoConvergence("continued fraction for the Gamma tail stalled")
    # series for P(s,x); here x <= s+1 so P is bounded away from 1
    term = 1.0 / s
    total = term
    for i in range(1, max_iter + 1):
        term *= x / (s + i)
        total += term
        if term < tol * total:
            log_p = s * math.log(x) - x - math.lgamma(s) + math.log(total)
            return math.log1p(-math.exp(log_p))
    raise NoConvergence("series for the Gamma tail stalled")


# ---------------------------------------------------------------------------
# rejection sampling


def rejection_point_sample(model: Model, a: float, n: int, L: int, rng,
                           h: Optional[float] = None,
                           max_draws: int = 10 ** 8) -> dict:
    """Brute-force i.i.d. paths accepted on |sum u(x) - n a| < h.

    Default window half-width h = 0.01 s(t_a)/sqrt(n) with t_a = m^{-1}(a).
    Returns {"paths": (L, n), "h": h, "n_drawn": total proposals}.
    """
    if h is None:
        t = solve_tilt(model, a)
        h = 0.01 * math.sqrt(float(model.cgf_d2(t))) / math.sqrt(n)
    if not h > 0.0:
        raise DomainError(f"need h > 0, got h={h}")
    kept = []
    n_kept = 0
    n_drawn = 0
    chunk = 1 << 16
    while n_kept < L:
        if n_drawn >= max_draws:
            raise NoConvergence(
                f"rejection oracle: {n_kept}/{L} accepted after {n_drawn} draws")
        x = np.asarray(model.sampler_base(rng, (chunk, n)), dtype=float)
        n_drawn += chunk
        su = np.asarray(model.u_map(x), dtype=float).sum(axis=1)
        acc = np.abs(su - n * a) < h
        got = x[acc]
        if got.size:
            kept.append(got)
            n_kept += got.shape[0]
    paths = np.concatenate(kept, axis=0)[:L]
    return {"paths": paths, "h": h, "n_drawn": n_drawn}


def rejection_exceedance_sample(model: Model, a: float, n: int, L: int, rng,
                                max_draws: int = 10 ** 9) -> dict:
    """Brute-force i.i.d. paths accepted on sum u(x) > n a.

    Returns {"paths": (L, n), "n_drawn": total proposals}; the acceptance
    rate estimates P(U_{1,n} > n a) as a byproduct.
    """
    kept = []
    n_kept = 0
    n_drawn = 0
    chunk = 1 << 16
    while n_kept < L:
        if n_drawn >= max_draws:
            raise NoConvergence(
                f"rejection oracle: {n_kept}/{L} accepted after {n_drawn} draws")
        x = np.asarray(model.sampler_base(rng, (chunk, n)), dtype=float)
        n_drawn += chunk
        su = np.asarray(model.u_map(x), dtype=float).sum(axis=1)
        got = x[su > n * a]
        if got.size:
            kept.append(got)
            n_kept += got.shape[0]
    paths = np.concatenate(kept, axis=0)[:L]
    return {"paths": paths, "n_drawn": n_drawn}
