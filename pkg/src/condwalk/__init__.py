"""Conditioned random walk approximation toolkit.

Evaluates and samples a recursive density approximation for the first k
steps of an i.i.d. walk conditioned on its terminal sum or functional
value, or on a large-deviation exceedance set.  Includes run-length
selection, rare-event importance sampling, Rao-Blackwellized estimation,
and brute-force reference oracles.
"""

from .errors import (
    CondwalkError,
    ConfigError,
    DomainError,
    RangeError,
    NoConvergence,
    IntegrationFailure,
    SupportError,
    EnvelopeViolation,
    GridTooCoarse,
    NotReached,
)
from .rng import stream, stream_key, spawn_seed
from .models import (
    CumulantProfile,
    Model,
    cumulants_at,
    solve_tilt,
    solve_tilt_many,
    tilted_logpdf,
    newton_tilt_step,
    hermite,
    standard_normal,
    centered_exponential,
    gamma_model,
    normal_usquare,
    builtin_model,
)
from .conditioning import (
    PointSum,
    PointFunctional,
    ExceedanceSet,
    CENTER_SHIFTS,
    RunLengthPolicy,
    StepState,
    validate_event,
    event_u_total,
    step_params,
    normalizing_constant,
    normalizing_constant_mc,
    eval_log_g,
    eval_log_g_batch,
    eval_log_first_order,
)
from .sampling import (
    PathSample,
    sample_modulated,
    sample_path,
    sample_path_batch,
    sample_large_set_path,
    sample_large_set_batch,
    draw_tilted,
)
from .runlength import (
    KReport,
    ABEstimate,
    saddlepoint_mean_logpdf,
    log_tilt_ratio,
    estimate_AB,
    select_k,
)
from .largeset import (
    RateFunction,
    HalfLine,
    Interval,
    rate,
    log_tail_prob,
    set_density_M,
    set_density_M_n,
    overshoot_logpdf,
    default_truncation,
    eval_log_g_nA,
    eval_log_g_nA_batch,
    condition_v_report,
)
from .applications import (
    ISReport,
    RBReport,
    is_estimate,
    mse_ratio_curve,
    rao_blackwell_gamma,
)
from . import oracles

__version__ = "0.1.0"

__all__ = [
    "CondwalkError",
    "ConfigError",
    "DomainError",
    "RangeError",
    "NoConvergence",
    "IntegrationFailure",
    "SupportError",
    "EnvelopeViolation",
    "GridTooCoarse",
    "NotReached",
    "stream",
    "stream_key",
    "spawn_seed",
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
    "PathSample",
    "sample_modulated",
    "sample_path",
    "sample_path_batch",
    "sample_large_set_path",
    "sample_large_set_batch",
    "draw_tilted",
    "KReport",
    "ABEstimate",
    "saddlepoint_mean_logpdf",
    "log_tilt_ratio",
    "estimate_AB",
    "select_k",
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
    "ISReport",
    "RBReport",
    "is_estimate",
    "mse_ratio_curve",
    "rao_blackwell_gamma",
    "oracles",
    "__version__",
]
