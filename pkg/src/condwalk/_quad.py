"""Log-space composite Gauss-Legendre quadrature for modulated integrals.

The recurring integral is int p_X(x) * n(M, beta, u(x)) dx over the support of
X, where n(mean, var, .) is a Gaussian density in u-space.  Integrands are
evaluated in log space and combined with logsumexp so that far-tail windows
(where both factors underflow) contribute exactly -inf instead of corrupting
the sum.

Windows are the intersection of the support with the union of the base-mass
bulk and the preimage of the Gaussian mass in u-space; each window is split
into panels with a fixed Gauss-Legendre rule per panel.  Every estimate is
re-computed with doubled node count; items that disagree are re-run with
doubled panel counts a few times before IntegrationFailure is raised.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .errors import IntegrationFailure

__all__ = [
    "log_normal_pdf",
    "merge_windows",
    "modulated_log_integral",
    "modulated_log_integral_batch",
    "adaptive_log_integral",
]

_LOG_2PI = math.log(2.0 * math.pi)


def log_normal_pdf(mean, var, x):
    """log of the Gaussian density with given mean and variance at x."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (x - mean) ** 2 / var - 0.5 * (_LOG_2PI + np.log(var))


@lru_cache(maxsize=16)
def _gl(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def merge_windows(windows):
    """Sort and merge overlapping (lo, hi) intervals; drop empty ones."""
    wins = sorted((lo, hi) for lo, hi in windows if hi > lo)
    merged = []
    for lo, hi in wins:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _clip_window(lo, hi, support):
    slo, shi = support
    return max(lo, slo), min(hi, shi)


def _modulated_windows(model, M: float, beta: float, width: float = 12.0):
    """Segments in x covering the mass of p_X(x) * n(M, beta, u(x)).

    The union of the base-mass bulk and the Gaussian-window preimage is split
    at every window edge, so each segment is paneled at the scale of the
    feature that lives on it (a wide flat Gaussian over the bulk, or a narrow
    Gaussian spike inside the bulk).
    """
    sd = math.sqrt(beta)
    glo, ghi = M - width * sd, M + width * sd
    wins = [_clip_window(*model.x_bulk, model.x_support)]
    if model.is_identity:
        wins.append(_clip_window(glo, ghi, model.x_support))
    elif model.name == "normal_usquare":
        # u = x^2: preimage of [max(glo,0), ghi] is symmetric about 0
        if ghi > 0.0:
            r_hi = math.sqrt(ghi)
            if glo <= 0.0:
                wins.append(_clip_window(-r_hi, r_hi, model.x_support))
            else:
                r_lo = math.sqrt(glo)
                wins.append(_clip_window(-r_hi, -r_lo, model.x_support))
                wins.append(_clip_window(r_lo, r_hi, model.x_support))
    else:
        # unknown map: widen the bulk and hope u is tame there
        blo, bhi = model.x_bulk
        span = bhi - blo
        wins.append(_clip_window(blo - span, bhi + span, model.x_support))
    union = merge_windows(wins)
    cuts = sorted({edge for w in wins for edge in w})
    segments = []
    for ulo, uhi in union:
        pts = [ulo] + [c for c in cuts if ulo < c < uhi] + [uhi]
        segments.extend((pts[j], pts[j + 1]) for j in range(len(pts) - 1))
    return segments


def _batch_log_integral(log_f, windows_per_item, n_panels: int, n_nodes: int):
    """log int f for B items; windows_per_item is a list of window lists.

    Evaluation grid is (B, Wmax * n_panels * n_nodes); missing windows are
    weighted -inf.
    """
    B = len(windows_per_item)
    Wmax = max(len(w) for w in windows_per_item)
    lo = np.full((B, Wmax), 0.0)
    hi = np.full((B, Wmax), 0.0)
    for b, wins in enumerate(windows_per_item):
        for w, (a, c) in enumerate(wins):
            lo[b, w], hi[b, w] = a, c

    nodes, weights = _gl(n_nodes)
    # panel edges: (B, W, P+1)
    frac = np.linspace(0.0, 1.0, n_panels + 1)
    edges = lo[..., None] + (hi - lo)[..., None] * frac
    a = edges[..., :-1]  # (B, W, P)
    c = edges[..., 1:]
    half = 0.5 * (c - a)
    mid = 0.5 * (c + a)
    x = mid[..., None] + half[..., None] * nodes  # (B, W, P, N)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logf = log_f(x.reshape(B, -1)).reshape(x.shape)
        logw = np.where(half[..., None] > 0, np.log(np.maximum(half[..., None], 1e-300)), -np.inf) + np.log(
            weights
        )
        logf = np.where(np.isfinite(logw), logf, -np.inf)
        logf = np.where(np.isnan(logf), -np.inf, logf)
        out = logsumexp((logf + np.where(np.isfinite(logw), logw, 0.0)).reshape(B, -1), axis=1)
    return out


def modulated_log_integral_batch(
    model,
    M,
    beta,
    n_panels: int = 8,
    n_nodes: int = 24,
    rtol: float = 1e-7,
    max_refine: int = 4,
):
    """log int p_X(x) n(M_b, beta_b, u(x)) dx for each item b.

    Closed-form model hooks are NOT consulted here; this is the generic route.
    """
    M = np.atleast_1d(np.asarray(M, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    M, beta = np.broadcast_arrays(M, beta)
    B = M.shape[0]
    windows = [_modulated_windows(model, float(M[b]), float(beta[b])) for b in range(B)]

    out = np.full(B, np.nan)
    todo = np.arange(B)
    panels = n_panels
    for round_ in range(max_refine + 1):
        idx = todo
        if idx.size == 0:
            break

        def _log_f(x, sel=idx):
            return model.base_logpdf(x) + log_normal_pdf(
                M[sel][:, None], beta[sel][:, None], model.u_map(x)
            )

        wins = [windows[b] for b in idx]
        v1 = _batch_log_integral(_log_f, wins, panels, n_nodes)
        v2 = _batch_log_integral(_log_f, wins, panels, 2 * n_nodes)
        agree = np.abs(v1 - v2) <= rtol * np.maximum(1.0, np.abs(v2))
        agree |= (v1 < -700) & (v2 < -700)  # both fully underflowed
        out[idx[agree]] = v2[agree]
        todo = idx[~agree]
        panels *= 2
    if todo.size:
        b = int(todo[0])
        raise IntegrationFailure(
            f"modulated integral did not converge for M={M[b]}, beta={beta[b]} "
            f"(model {model.name}, {todo.size} item(s) total)"
        )
    return out


def modulated_log_integral(model, M: float, beta: float, **kw) -> float:
    """Scalar convenience wrapper around modulated_log_integral_batch."""
    return float(modulated_log_integral_batch(model, [M], [beta], **kw)[0])


def adaptive_log_integral(
    log_f,
    windows,
    n_panels: int = 16,
    n_nodes: int = 24,
    rtol: float = 1e-8,
    max_refine: int = 5,
) -> float:
    """log int f over a union of windows, with doubled-node self-check.

    log_f must accept an array of shape (1, K) (batch-of-one convention).
    """
    wins = merge_windows(windows)
    if not wins:
        return -np.inf
    panels = n_panels
    for _ in range(max_refine + 1):
        v1 = float(_batch_log_integral(log_f, [wins], panels, n_nodes)[0])
        v2 = float(_batch_log_integral(log_f, [wins], panels, 2 * n_nodes)[0])
        if abs(v1 - v2) <= rtol * max(1.0, abs(v2)) or (v1 < -700 and v2 < -700):
            return v2
        panels *= 2
    raise IntegrationFailure(f"adaptive_log_integral did not converge on windows {wins}")
