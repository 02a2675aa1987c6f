"""Run-length selection: how many steps of the conditioned walk to trust.

The relative error of the approximating density g over the first k steps is
estimated from L i.i.d. paths drawn under the base law p_X.  Writing p~ for
the saddlepoint form of the exact conditional density,

    p~(y_1^k) = prod p_X(y_i) * sqrt(n/(n-k)) * (D/N) * s(t)/s(t_k),
    D = exp(n I(m_0)),  N = exp((n-k) I(m_k)),

the moments E_G[g/p~] and E_G[(g/p~)^2] are reachable from base sampling:

    B(Y) = (g/p_X) * (g/p~),    A(Y) = (g/p_X) * (g/p~)^2,

so ERE(k) = 1 - mean(B), VRE(k) = mean(A) - mean(B)^2, and the two-sigma band
CI(k) = ERE -/+ 2 sqrt(VRE).  k_delta is the first k whose band contains the
prescribed accuracy delta.  An exact conditional density (an oracle) may be
substituted for p~ to produce the reference bands the approximation is judged
against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conditioning import (
    PointFunctional,
    PointSum,
    eval_log_g_batch,
    event_u_total,
    validate_event,
)
from .errors import ConfigError, DomainError, NotReached, RangeError
from .models import Model, solve_tilt, solve_tilt_many
from .rng import stream

__all__ = [
    "KReport",
    "ABEstimate",
    "saddlepoint_mean_logpdf",
    "log_tilt_ratio",
    "estimate_AB",
    "select_k",
]

_CHUNK = 512  # replicate chunk size; streams are keyed per chunk


def saddlepoint_mean_logpdf(model: Model, n: int, u: float) -> float:
    """First-order saddlepoint log-density of the mean U_{1,n}/n at u.

    log[ sqrt(n) * phi^n(t) * exp(-n t u) / (s(t) sqrt(2 pi)) ] with m(t)=u.
    Exact for the standard normal; relative error O(1/n) otherwise.
    """
    if n < 1:
        raise DomainError(f"saddlepoint_mean_logpdf needs n >= 1, got {n}")
    t = solve_tilt(model, u)
    rate = t * u - float(model.cgf(t))  # I_U(u)
    s2 = float(model.cgf_d2(t))
    return 0.5 * math.log(n) - n * rate - 0.5 * math.log(s2) - 0.5 * math.log(2.0 * math.pi)


def log_tilt_ratio(model: Model, count: int, m_level: float) -> float:
    """count * (t m - cgf(t)) with m(t) = m_level: the exact log of
    [pi^m(m)/p_U(m)]^count, no density evaluation needed."""
    if count < 1:
        raise DomainError(f"log_tilt_ratio needs count >= 1, got {count}")
    t = solve_tilt(model, m_level)
    return count * (t * m_level - float(model.cgf(t)))


@dataclass
class ABEstimate:
    """Monte Carlo estimates of the two relative-error moments at one k."""

    a_hat: float
    b_hat: float
    a_stderr: float
    b_stderr: float
    L_used: int
    n_discarded: int
    winsorized: bool


def _as_point_functional(model: Model, event) -> PointFunctional:
    if event.kind == "PointFunctional":
        return event
    if event.kind == "PointSum":
        return PointFunctional(u_total=event.n * event.a, n=event.n)
    raise ConfigError("run-length estimation takes a point conditioning event")


def _base_paths(model: Model, n: int, k: int, L: int, rng) -> np.ndarray:
    """L x k i.i.d. base draws; an integer rng is a seed keyed per chunk so
    the matrix does not depend on how callers shard the replicates."""
    if isinstance(rng, np.random.Generator):
        return np.asarray(model.sampler_base(rng, (L, k)), dtype=float)
    seed = int(rng)
    blocks = []
    for j0 in range(0, L, _CHUNK):
        r = stream(seed, "estimate_ab", n, k, j0)
        blocks.append(np.asarray(model.sampler_base(r, (min(_CHUNK, L - j0), k)), dtype=float))
    return np.concatenate(blocks, axis=0)


def _winsorize_upper(values: np.ndarray, q: float):
    """Cap the upper tail at the q-quantile; returns (values, was_capped)."""
    if values.size < 2:
        return values, False
    cap = np.quantile(values, q)
    hi = values > cap
    if hi.any():
        values = np.where(hi, cap, values)
        return values, True
    return values, False


def estimate_AB(model: Model, event, k: int, L: int, rng,
                shift_mode: str = "paper_m0",
                conditional_logpdf: Optional[Callable] = None,
                winsor_q: float = 0.9999) -> ABEstimate:
    """Sample means of A(Y) and B(Y) over L i.i.d. base paths of length k.

    rng may be a Generator (single stream) or an integer seed (chunked
    streams, sharding-independent).  conditional_logpdf, when given, maps the
    (L, k) path matrix to exact conditional log-densities and replaces the
    saddlepoint ratio (the "oracle" variant; non-finite entries are
    discarded).  k = 0 is the degenerate convention A = B = 1.  Paths whose
    recursion leaves the attainable range are discarded and counted.  Both
    A and B samples are winsorized at the winsor_q quantile (flagged).
    """
    event = _as_point_functional(model, event)
    validate_event(model, event)
    n = event.n
    if k == 0:
        return ABEstimate(a_hat=1.0, b_hat=1.0, a_stderr=0.0, b_stderr=0.0,
                          L_used=L, n_discarded=0, winsorized=False)
    if not 1 <= k < n:
        raise DomainError(f"need 0 <= k < n, got k={k}, n={n}")
    if L < 1:
        raise DomainError(f"need L >= 1, got L={L}")

    paths = _base_paths(model, n, k, L, rng)
    log_g, ok, m_terminal = eval_log_g_batch(model, event, paths, shift_mode=shift_mode)
    log_p = np.sum(model.base_logpdf(paths), axis=1)

    if conditional_logpdf is not None:
        log_cond = np.asarray(conditional_logpdf(paths), dtype=float)
        ok &= np.isfinite(log_cond)
        log_ratio = np.where(ok, log_g - np.where(ok, log_cond, 0.0), -np.inf)
    else:
        m0 = event.u_total / n
        t0 = solve_tilt(model, m0)
        log_D = n * (t0 * m0 - float(model.cgf(t0)))
        log_s0 = 0.5 * math.log(float(model.cgf_d2(t0)))
        lo_u, hi_u = model.u_support
        ok &= (m_terminal > lo_u) & (m_terminal < hi_u)
        t_k, solved = solve_tilt_many(model, np.where(ok, m_terminal, m0))
        ok &= solved
        t_k = np.where(ok, t_k, t0)
        m_k = np.where(ok, m_terminal, m0)
        log_N = (n - k) * (t_k * m_k - np.asarray(model.cgf(t_k), dtype=float))
        log_sk = 0.5 * np.log(np.asarray(model.cgf_d2(t_k), dtype=float))
        # log(g / p~) = log g - log p - [0.5 log(n/(n-k)) + D - N + s(t0) - s(t_k)] in logs
        log_ratio = (log_g - log_p - 0.5 * math.log(n / (n - k))
                     - (log_D - log_N) - (log_s0 - log_sk))
        log_ratio = np.where(ok, log_ratio, -np.inf)

    n_discarded = int(L - np.count_nonzero(ok))
    if not ok.any():
        raise RangeError(f"all {L} paths were discarded at k={k}; "
                         "the conditioning is too extreme for base sampling")
    base_excess = np.where(ok, log_g - log_p, -np.inf)
    log_b = base_excess + log_ratio
    log_a = base_excess + 2.0 * log_ratio

    a_vals = np.exp(log_a[ok])
    b_vals = np.exp(log_b[ok])
    a_vals, wa = _winsorize_upper(a_vals, winsor_q)
    b_vals, wb = _winsorize_upper(b_vals, winsor_q)
    L_used = int(a_vals.size)
    a_hat = float(np.mean(a_vals))
    b_hat = float(np.mean(b_vals))
    a_se = float(np.std(a_vals, ddof=1) / math.sqrt(L_used)) if L_used > 1 else 0.0
    b_se = float(np.std(b_vals, ddof=1) / math.sqrt(L_used)) if L_used > 1 else 0.0
    return ABEstimate(a_hat=a_hat, b_hat=b_hat, a_stderr=a_se, b_stderr=b_se,
                      L_used=L_used, n_discarded=n_discarded, winsorized=wa or wb)


@dataclass
class KReport:
    """Relative-error diagnostics on a grid of run lengths.

    Rows are sorted by k.  ci_lo/ci_hi are exactly ere_bar -/+ 2 sqrt(vre_bar)
    (vre_bar clamped at 0, raw value kept in vre_raw).  k_delta is the first
    scanned k whose band contains delta (None only inside a NotReached report).
    """

    ks: np.ndarray
    ere_bar: np.ndarray
    vre_bar: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    L_used: np.ndarray
    mc_stderr: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    vre_raw: np.ndarray
    n_discarded: np.ndarray
    delta: float
    L: int
    k_delta: Optional[int] = None
    winsorized: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def row(self, k: int) -> dict:
        j = int(np.nonzero(self.ks == k)[0][0])
        return {name: getattr(self, name)[j] for name in
                ("ks", "ere_bar", "vre_bar", "ci_lo", "ci_hi", "L_used", "mc_stderr",
                 "a_hat", "b_hat", "vre_raw", "n_discarded", "winsorized")}


def _default_geometric_grid(n: int) -> list:
    ks = []
    k = 1
    while k <= n - 1:
        ks.append(k)
        k *= 2
    if ks[-1] != n - 1:
        ks.append(n - 1)
    return ks


def _band_contains(row: dict, delta: float) -> bool:
    return row["ci_lo"] <= delta <= row["ci_hi"]


def select_k(model: Model, event, delta: float, L: int,
             k_grid: Optional[Sequence[int]] = None, rng=0,
             shift_mode: str = "paper_m0",
             conditional_logpdf: Optional[Callable] = None,
             k_step: Optional[int] = None) -> KReport:
    """Scan run lengths until the accuracy band first contains delta.

    With an explicit k_grid (or k_step=1 for unit increments) the scan stops
    at the first k with delta in CI(k).  The default grid is geometric
    {1, 2, 4, ...} and the first crossing is then refined by bisection to the
    smallest such k; every evaluated k is kept in the report.  Raises
    NotReached (with the full table attached) when no scanned k qualifies.
    """
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    event = _as_point_functional(model, event)
    n = event.n
    if k_grid is None:
        if k_step is not None:
            k_grid = list(range(max(1, k_step), n, k_step))
            refine = False
        else:
            k_grid = _default_geometric_grid(n)
            refine = True
    else:
        k_grid = sorted(int(k) for k in k_grid)
        refine = False
    if not k_grid:
        raise ConfigError("empty run-length grid")

    rows = {}

    def _eval(k: int) -> dict:
        est = estimate_AB(model, event, k, L, rng, shift_mode=shift_mode,
                          conditional_logpdf=conditional_logpdf)
        vre_raw = est.a_hat - est.b_hat**2
        vre = max(vre_raw, 0.0)
        ere = 1.0 - est.b_hat
        half = 2.0 * math.sqrt(vre)
        row = {"ks": k, "ere_bar": ere, "vre_bar": vre, "ci_lo": ere - half,
               "ci_hi": ere + half, "L_used": est.L_used, "mc_stderr": est.b_stderr,
               "a_hat": est.a_hat, "b_hat": est.b_hat, "vre_raw": vre_raw,
               "n_discarded": est.n_discarded, "winsorized": est.winsorized}
        rows[k] = row
        return row

    k_delta = None
    prev_k = 0
    for k in k_grid:
        row = _eval(k)
        if _band_contains(row, delta):
            k_delta = k
            break
        prev_k = k

    if k_delta is not None and refine and k_delta - prev_k > 1:
        lo, hi = prev_k, k_delta  # no hit at lo (or lo=0), hit at hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            row = _eval(mid)
            if _band_contains(row, delta):
                hi = mid
            else:
                lo = mid
        k_delta = hi

    ks = np.array(sorted(rows), dtype=int)
    report = KReport(
        ks=ks,
        ere_bar=np.array([rows[k]["ere_bar"] for k in ks]),
        vre_bar=np.array([rows[k]["vre_bar"] for k in ks]),
        ci_lo=np.array([rows[k]["ci_lo"] for k in ks]),
        ci_hi=np.array([rows[k]["ci_hi"] for k in ks]),
        L_used=np.array([rows[k]["L_used"] for k in ks], dtype=int),
        mc_stderr=np.array([rows[k]["mc_stderr"] for k in ks]),
        a_hat=np.array([rows[k]["a_hat"] for k in ks]),
        b_hat=np.array([rows[k]["b_hat"] for k in ks]),
        vre_raw=np.array([rows[k]["vre_raw"] for k in ks]),
        n_discarded=np.array([rows[k]["n_discarded"] for k in ks], dtype=int),
        winsorized=np.array([rows[k]["winsorized"] for k in ks], dtype=bool),
        delta=delta,
        L=L,
        k_delta=k_delta,
    )
    if k_delta is None:
        raise NotReached(
            f"no k in {list(k_grid)} has delta={delta} inside its confidence band",
            report=report,
        )
    return report
