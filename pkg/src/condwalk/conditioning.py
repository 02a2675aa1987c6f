"""Recursive approximating density for a random walk conditioned on its end value.

Condition the first k steps of an i.i.d. walk X_1..X_n on the terminal value
of U_{1,n} = sum u(X_i).  The approximating density factorizes as

    g(y_1^k) = g_0(y_1) * prod_{i=1}^{k-1} g(y_{i+1} | y_1^i),

where g_0 is the tilted density pinning the mean of u at m_0 = u_{1,n}/n and
each later factor is a base density modulated by a Gaussian in u-space,

    g(y_{i+1} | y_1^i) = C_i * p_X(y_{i+1}) * n(alpha*beta + shift, beta, u(y_{i+1})),

with, at step i (0-based, running sum u_{1,i} consumed),

    m_i   = (u_{1,n} - u_{1,i}) / (n - i),        t_i = m^{-1}(m_i),
    alpha = t_i + mu3_i / (2 s_i^4 (n - i - 1)),  beta = s_i^2 (n - i - 1),

and C_i the normalizing constant.  The Gaussian center addend ("shift") is
m_0 by default; for identity-map point-sum conditioning it is configurable
among {"paper_a", "paper_m0", "adaptive_mi"}.  The adaptive variant centers
each factor at alpha*beta + m_i and uses the modulated factor at step 0 as
well, which renders the scheme exact in the Gaussian case for every k <= n-1.

All step arithmetic runs through one vectorized engine; scalar entry points
evaluate as a batch of one, so a path evaluated twice (or sampled and then
re-scored) reproduces its log-density bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._quad import log_normal_pdf, modulated_log_integral_batch
from .errors import ConfigError, DomainError, RangeError
from .models import (
    CumulantProfile,
    Model,
    cumulants_at,
    hermite,
    newton_tilt_step,
    solve_tilt,
    solve_tilt_many,
    tilted_logpdf,
)

__all__ = [
    "PointSum",
    "PointFunctional",
    "ExceedanceSet",
    "CENTER_SHIFTS",
    "RunLengthPolicy",
    "StepState",
    "validate_event",
    "event_u_total",
    "step_params",
    "normalizing_constant",
    "normalizing_constant_mc",
    "eval_log_g",
    "eval_log_g_batch",
    "eval_log_first_order",
]

CENTER_SHIFTS = ("paper_a", "paper_m0", "adaptive_mi")


@dataclass(frozen=True)
class PointSum:
    """Condition on S_{1,n} = n*a (identity conditioning map required)."""

    a: float
    n: int
    kind = "PointSum"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"PointSum needs n >= 2, got n={self.n}")


@dataclass(frozen=True)
class PointFunctional:
    """Condition on U_{1,n} = u_total for a general conditioning map u."""

    u_total: float
    n: int
    kind = "PointFunctional"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"PointFunctional needs n >= 2, got n={self.n}")

    @property
    def a(self) -> float:
        return self.u_total / self.n


@dataclass(frozen=True)
class ExceedanceSet:
    """Condition on the exceedance {U_{1,n} > n*a}; c truncates the overshoot."""

    a: float
    n: int
    c: Optional[float] = None
    kind = "ExceedanceSet"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"ExceedanceSet needs n >= 2, got n={self.n}")
        if self.c is not None and not self.c > 0:
            raise ConfigError(f"ExceedanceSet truncation width must be > 0, got c={self.c}")


def event_u_total(event) -> float:
    """Total conditioning value u_{1,n} of a point event."""
    if event.kind == "PointSum":
        return event.n * event.a
    if event.kind == "PointFunctional":
        return event.u_total
    raise ConfigError(f"event kind {event.kind} has no fixed total")


def validate_event(model: Model, event) -> None:
    """Check event invariants that need the model: attainability, tail side."""
    lo, hi = model.u_support
    if not (lo < event.a < hi):
        raise RangeError(
            f"target mean a={event.a} outside attainable range {model.u_support} "
            f"of model {model.name}"
        )
    if event.kind == "PointSum" and not model.is_identity:
        raise ConfigError("PointSum conditioning requires an identity conditioning map; "
                          "use PointFunctional instead")
    if event.kind == "ExceedanceSet":
        m0 = float(model.cgf_d1(0.0))
        if not event.a > m0:
            raise RangeError(
                f"exceedance level a={event.a} must exceed the base mean m(0)={m0}"
            )


@dataclass
class RunLengthPolicy:
    """Run length k with the recommended accuracy-sequence value epsilon_n.

    k < n is required; epsilon_n*sqrt(n-k) >= 1 is recommended and only
    warned about, as is k >= n-1 (the edge the approximation is weakest at).
    """

    k: int
    epsilon_n: Optional[float] = None

    def validate(self, n: int) -> None:
        if not 1 <= self.k < n:
            raise DomainError(f"run length k={self.k} must satisfy 1 <= k < n={n}")
        if self.k >= n - 1:
            warnings.warn(f"k={self.k} >= n-1={n - 1}: approximation quality degrades "
                          "at the last step", stacklevel=2)
        if self.epsilon_n is not None and self.epsilon_n * math.sqrt(n - self.k) < 1.0:
            warnings.warn(
                f"epsilon_n*sqrt(n-k) = {self.epsilon_n * math.sqrt(n - self.k):.3g} < 1: "
                "accuracy sequence too small for this run length", stacklevel=2
            )


@dataclass(frozen=True)
class StepState:
    """Frozen record of one recursion step (defines the factor for y_{i+1})."""

    i: int
    running_u_sum: float
    m_i: float
    t_i: float
    profile: CumulantProfile
    alpha: float
    beta: float
    log_C_i: float
    shift: float


def _check_shift_mode(shift_mode: str) -> None:
    if shift_mode not in CENTER_SHIFTS:
        raise ConfigError(f"unknown center-shift mode {shift_mode!r}; choose from {CENTER_SHIFTS}")


def _effective_shift_mode(model: Model, event, shift_mode: str) -> str:
    # the shift is configurable only for identity point-sum conditioning;
    # functional conditioning always centers at alpha*beta + m_0
    _check_shift_mode(shift_mode)
    if event.kind == "PointSum" and model.is_identity:
        return shift_mode
    return "paper_m0"


def normalizing_constant(model: Model, alpha: float, beta: float, m0: float,
                         method: str = "auto") -> float:
    """log C with C^{-1} = int p_X(x) n(alpha*beta + m0, beta, u(x)) dx.

    method: "auto" uses the model's closed-form hook when available, else
    deterministic quadrature; "quadrature" and "closed_form" force a route
    (tests compare the two); "mc" is served by normalizing_constant_mc.
    """
    if not beta > 0:
        raise DomainError(f"normalizing_constant needs beta > 0, got {beta}")
    M = alpha * beta + m0
    if method == "auto":
        method = "closed_form" if model.log_modulated_integral is not None else "quadrature"
    if method == "closed_form":
        if model.log_modulated_integral is None:
            raise ConfigError(f"model {model.name} has no closed-form modulated integral")
        return -float(model.log_modulated_integral(M, beta))
    if method == "quadrature":
        return -float(modulated_log_integral_batch(model, [M], [beta])[0])
    raise ConfigError(f"unknown normalizing_constant method {method!r}")


def normalizing_constant_mc(model: Model, alpha: float, beta: float, m0: float,
                            L: int, rng) -> tuple:
    """Monte Carlo log C under p_X with its standard error (delta method)."""
    if not beta > 0:
        raise DomainError(f"normalizing_constant_mc needs beta > 0, got {beta}")
    M = alpha * beta + m0
    x = model.sampler_base(rng, L)
    vals = np.exp(log_normal_pdf(M, beta, model.u_map(x)))
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) / math.sqrt(L)
    if mean <= 0:
        raise DomainError("Monte Carlo normalizing constant estimate is zero; "
                          "increase L or use quadrature")
    return -math.log(mean), sd / mean


def _log_C_batch(model: Model, alpha, beta, shift) -> np.ndarray:
    """Vectorized log C_i over per-path arrays (closed form or quadrature)."""
    M = alpha * beta + shift
    if model.log_modulated_integral is not None:
        return -np.asarray(model.log_modulated_integral(M, beta), dtype=float)
    return -modulated_log_integral_batch(model, M, beta)


def _step_columns(model: Model, i: int, n: int, m_col, ok, prev, mode: str,
                  m0_like, a_like, need_log_C: bool) -> dict:
    """One recursion step over an (L,) column of required means m_col.

    prev is the previous step's output dict (or None at i=0); it supplies the
    Newton-linearized warm start.  m0_like and a_like are scalars or (L,)
    arrays (per-row conditioning levels, used by mixture evaluators).  Shared
    verbatim by the path evaluator and the path sampler so that sampling and
    re-scoring agree bit for bit.
    """
    L = m_col.shape[0]
    m0_col = np.broadcast_to(np.asarray(m0_like, dtype=float), (L,))
    a_col = np.broadcast_to(np.asarray(a_like, dtype=float), (L,))
    if prev is None:
        warm = None
    else:
        warm = newton_tilt_step(prev["t"], m_col, prev["m"], prev["s2"])
        warm = np.where(np.asarray(model.in_t_domain(warm)), warm, prev["t"])
    t_i, solved = solve_tilt_many(model, np.where(ok, m_col, m0_col), warm_start=warm)
    ok = ok & solved
    t_safe = np.where(ok, t_i, 0.0)

    s2 = np.asarray(model.cgf_d2(t_safe), dtype=float)
    mu3 = np.asarray(model.cgf_d3(t_safe), dtype=float)
    mu4 = np.asarray(model.cgf_d4(t_safe), dtype=float)
    rem = n - i - 1
    alpha = t_safe + mu3 / (2.0 * s2**2 * rem)
    beta = s2 * rem
    if mode == "paper_a":
        shift = a_col.copy()
    elif mode == "paper_m0":
        shift = m0_col.copy()
    else:
        shift = np.where(ok, m_col, m0_col)

    modulated = (i > 0) or (mode == "adaptive_mi")
    if modulated or need_log_C:
        log_C = np.where(ok, _log_C_batch(model, np.where(ok, alpha, 0.0),
                                          np.where(ok, beta, 1.0),
                                          np.where(ok, shift, 0.0)), np.nan)
    else:
        log_C = np.full(L, np.nan)

    return {
        "i": i, "m": np.where(ok, m_col, m0_col), "m_raw": m_col, "t": t_safe,
        "s2": s2, "mu3": mu3, "mu4": mu4, "alpha": alpha, "beta": beta,
        "shift": shift, "log_C": log_C, "ok": ok, "modulated": modulated,
    }


def _log_factor(model: Model, cols: dict, y, u_y):
    """log of the step-i proposal factor at y (tilted at i=0, else modulated)."""
    if cols["modulated"]:
        center = cols["alpha"] * cols["beta"] + cols["shift"]
        return cols["log_C"] + model.base_logpdf(y) + log_normal_pdf(center, cols["beta"], u_y)
    return model.base_logpdf(y) + cols["t"] * u_y - np.asarray(model.cgf(cols["t"]), dtype=float)


def _recursion(model: Model, event, paths: np.ndarray, shift_mode: str,
               want_trace: bool = False, compute_all_log_C: bool = False,
               u_totals=None):
    """Vectorized recursion over a (L, k) batch of paths.

    Returns a dict with log_g (L,), ok (L,), bad_step (L,; -1 when ok),
    m_terminal (L,), and per-step column arrays when want_trace.  Paths are
    marked not-ok (never raised here) when some m_i or terminal solve leaves
    the attainable range; scalar wrappers convert that to RangeError.
    u_totals, when given, overrides the event total per row (mixture
    evaluators score each row against its own point level).
    """
    mode = _effective_shift_mode(model, event, shift_mode)
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    L, k = paths.shape
    n = event.n
    if u_totals is None:
        u_total = event_u_total(event)
    else:
        u_total = np.broadcast_to(np.asarray(u_totals, dtype=float), (L,))
    if not 1 <= k <= n - 1:
        raise DomainError(f"path length k={k} must satisfy 1 <= k <= n-1 (n={n})")

    u_vals = np.asarray(model.u_map(paths), dtype=float)
    running = np.concatenate([np.zeros((L, 1)), np.cumsum(u_vals, axis=1)], axis=1)
    denom = n - np.arange(k)
    tot_col = u_total if np.ndim(u_total) == 0 else u_total[:, None]
    m = (tot_col - running[:, :k]) / denom  # m[:, i] consumed at step i

    lo_u, hi_u = model.u_support
    m_ok = (m > lo_u) & (m < hi_u) & np.isfinite(m)
    ok = np.ones(L, dtype=bool)
    bad_step = np.full(L, -1, dtype=np.int64)

    log_g = np.zeros(L)
    m0_like = u_total / n
    a_like = event.a if u_totals is None else m0_like
    trace = [] if want_trace else None

    prev = None
    for i in range(k):
        newly_bad = ok & ~m_ok[:, i]
        bad_step[newly_bad] = i
        ok &= m_ok[:, i]

        cols = _step_columns(model, i, n, m[:, i], ok, prev, mode,
                             m0_like, a_like, compute_all_log_C)
        newly_bad = ok & ~cols["ok"]
        bad_step[newly_bad] = i
        ok = cols["ok"]

        factor = _log_factor(model, cols, paths[:, i], u_vals[:, i])
        log_g = np.where(ok, log_g + factor, -np.inf)

        if want_trace:
            trace.append({**cols, "running_u_sum": running[:, i].copy()})
        prev = cols

    m_terminal = (u_total - running[:, k]) / (n - k)
    return {
        "log_g": log_g,
        "ok": ok,
        "bad_step": bad_step,
        "m_terminal": m_terminal,
        "trace": trace,
    }


def step_params(model: Model, event, i: int, running_u_sum: float,
                shift_mode: str = "paper_m0", prev: Optional[StepState] = None) -> StepState:
    """Per-step parameters (m_i, t_i, profile, alpha, beta, log C_i) at step i.

    prev, when given, warm-starts the tilt solve with the one-step Newton
    linearization from the previous step.
    """
    validate_event(model, event)
    n = event.n
    if not 0 <= i <= n - 2:
        raise DomainError(f"step index i={i} must satisfy 0 <= i <= n-2 (n={n})")
    mode = _effective_shift_mode(model, event, shift_mode)
    u_total = event_u_total(event)
    m_i = (u_total - running_u_sum) / (n - i)
    lo_u, hi_u = model.u_support
    if not (lo_u < m_i < hi_u):
        raise RangeError(
            f"step {i}: required mean m_i={m_i} leaves the attainable range {model.u_support}"
        )
    if prev is not None:
        warm = newton_tilt_step(prev.t_i, m_i, prev.m_i, prev.profile.s2)
        t_arr, solved = solve_tilt_many(model, [m_i], warm_start=[model.clamp_tilt(warm)])
        if not solved[0]:
            raise RangeError(f"step {i}: tilt solve failed for m_i={m_i}")
        t_i = float(t_arr[0])
    else:
        t_i = solve_tilt(model, m_i)
    profile = cumulants_at(model, t_i)
    rem = n - i - 1
    alpha = t_i + profile.mu3 / (2.0 * profile.s2**2 * rem)
    beta = profile.s2 * rem
    m0 = u_total / n
    shift = {"paper_a": event.a, "paper_m0": m0, "adaptive_mi": m_i}[mode]
    log_C = normalizing_constant(model, alpha, beta, shift)
    return StepState(i=i, running_u_sum=running_u_sum, m_i=m_i, t_i=t_i, profile=profile,
                     alpha=alpha, beta=beta, log_C_i=log_C, shift=shift)


def _states_from_trace(trace, path_idx: int, k: int):
    states = []
    for col in trace[:k]:
        states.append(StepState(
            i=int(col["i"]),
            running_u_sum=float(col["running_u_sum"][path_idx]),
            m_i=float(col["m_raw"][path_idx]),
            t_i=float(col["t"][path_idx]),
            profile=CumulantProfile(
                t=float(col["t"][path_idx]), m=float(col["m_raw"][path_idx]),
                s2=float(col["s2"][path_idx]), mu3=float(col["mu3"][path_idx]),
                mu4=float(col["mu4"][path_idx]),
            ),
            alpha=float(col["alpha"][path_idx]),
            beta=float(col["beta"][path_idx]),
            log_C_i=float(col["log_C"][path_idx]),
            shift=float(col["shift"][path_idx]),
        ))
    return states


def eval_log_g(model: Model, event, path, shift_mode: str = "paper_m0"):
    """log g(y_1^k) with the per-step trace, for a point conditioning event.

    Returns (log_g, [StepState, ...]).  Raises RangeError when the recursion
    leaves the attainable range (the conditioning makes the path impossible).
    """
    validate_event(model, event)
    if event.kind not in ("PointSum", "PointFunctional"):
        raise ConfigError("eval_log_g takes a point conditioning event")
    path = np.asarray(path, dtype=float)
    if path.ndim != 1:
        raise DomainError("eval_log_g evaluates a single path; use eval_log_g_batch")
    out = _recursion(model, event, path[None, :], shift_mode,
                     want_trace=True, compute_all_log_C=True)
    if not out["ok"][0]:
        raise RangeError(
            f"path impossible under conditioning at step {int(out['bad_step'][0])}: "
            "required mean left the attainable range"
        )
    return float(out["log_g"][0]), _states_from_trace(out["trace"], 0, path.shape[0])


def eval_log_g_batch(model: Model, event, paths, shift_mode: str = "paper_m0",
                     u_totals=None):
    """Vectorized eval_log_g over an (L, k) batch.

    Returns (log_g, ok, m_terminal); log_g is -inf where not ok.  Bitwise
    identical per path to eval_log_g (same engine, same operation order).
    u_totals, when given, scores row j against its own total u_totals[j]
    instead of the event's (mixture evaluators over point levels).
    """
    if u_totals is None:
        validate_event(model, event)
    if event.kind not in ("PointSum", "PointFunctional"):
        raise ConfigError("eval_log_g_batch takes a point conditioning event")
    out = _recursion(model, event, paths, shift_mode, u_totals=u_totals)
    return out["log_g"], out["ok"], out["m_terminal"]


def eval_log_first_order(model: Model, a: float, n: int, path) -> float:
    """First-order (Edgeworth-corrected tilted product) log-density on R^k.

    log of prod pi^a(x_i) * [n(z)/n(0)] * sqrt(n/(n-k))
           * (1 + mu3/(6 s^3 sqrt(n-k)) * H3(z)),
    z = (k a - s_{1,k}) / (s sqrt(n-k)), all cumulants at the tilt m(t)=a.
    The Edgeworth bracket is clamped at 1e-12 (with a warning) when the far
    tail drives it negative.
    """
    if not model.is_identity:
        raise DomainError("eval_log_first_order requires an identity conditioning map")
    path = np.asarray(path, dtype=float)
    k = path.shape[0]
    if not 1 <= k < n:
        raise DomainError(f"need 1 <= k < n, got k={k}, n={n}")
    t_a = solve_tilt(model, a)
    prof = cumulants_at(model, t_a)
    s = math.sqrt(prof.s2)
    s1k = float(np.sum(model.u_map(path)))
    z = (k * a - s1k) / (s * math.sqrt(n - k))
    bracket = 1.0 + prof.mu3 / (6.0 * s**3 * math.sqrt(n - k)) * hermite(3, z)
    if bracket < 1e-12:
        warnings.warn(
            f"first-order Edgeworth bracket {bracket:.3g} clamped to 1e-12 at z={z:.3g}",
            stacklevel=2,
        )
        bracket = 1e-12
    log_tilted = float(np.sum(tilted_logpdf(model, t_a, path)))
    return (log_tilted - 0.5 * z * z + 0.5 * math.log(n / (n - k)) + math.log(bracket))
