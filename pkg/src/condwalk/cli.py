"""Command-line surface.

Subcommands: simulate, select-k, estimate-rare, rao-blackwell, tail, oracle,
density-eval.  Every run is driven by a JSON config validated against the
published schema (config_schema.json); CLI flags override the corresponding
config entries.  Outputs are CSV (tabular/plot data) and JSON (summaries),
written atomically; with a fixed seed the emitted bytes are identical across
reruns and worker counts.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 path-abort rate above 1% in simulate.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import os
import secrets
import sys
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

from . import oracles
from .applications import is_estimate, mse_ratio_curve, rao_blackwell_gamma
from .conditioning import (ExceedanceSet, PointFunctional, PointSum,
                           eval_log_g, eval_log_g_batch)
from .errors import (CondwalkError, ConfigError, DomainError,
                     EnvelopeViolation, GridTooCoarse, IntegrationFailure,
                     NoConvergence, NotReached, RangeError, SupportError)
from .largeset import eval_log_g_nA_batch, log_tail_prob, rate
from .models import Model, builtin_model, solve_tilt
from .rng import stream
from .runlength import select_k
from .sampling import sample_large_set_batch, sample_large_set_path, \
    sample_path, sample_path_batch

_CHUNK = 1024
_TRACE_PATHS = 8

_CONFIG_EXIT = (ConfigError, DomainError, RangeError, SupportError)
_NUMERIC_EXIT = (NoConvergence, IntegrationFailure, EnvelopeViolation,
                 GridTooCoarse)


# ---------------------------------------------------------------------------
# config handling


def load_schema() -> dict:
    text = resources.files("condwalk").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path: str) -> dict:
    try:
        with open(path, "r") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = "; ".join(
            f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in errs)
        raise ConfigError(f"config does not match schema: {msgs}")
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    run = cfg.setdefault("run", {})
    out = cfg.setdefault("output", {})
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        run["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        out["dir"] = args.out
    if getattr(args, "k_step", None) is not None:
        run["k_step"] = args.k_step
    return cfg


def _ensure_seed(cfg: dict) -> tuple:
    """Return (seed, auto_generated); an omitted seed is drawn once and echoed
    in every summary so the run stays reproducible after the fact."""
    run = cfg.setdefault("run", {})
    if "seed" in run:
        return int(run["seed"]), False
    seed = secrets.randbits(63)
    run["seed"] = seed
    print(f"seed: {seed} (auto-generated; pass run.seed or --seed to fix)",
          file=sys.stderr)
    return seed, True


def _need(cfg: dict, block: str, *keys) -> dict:
    if block not in cfg:
        raise ConfigError(f"this command requires a {block!r} config block")
    got = cfg[block]
    missing = [key for key in keys if key not in got]
    if missing:
        raise ConfigError(f"config block {block!r} is missing {missing}")
    return got


# ---------------------------------------------------------------------------
# expression models (cgf given as a formula in t; enough for tail analysis)

_ALLOWED_CALLS = {
    "log": np.log, "log1p": np.log1p, "exp": np.exp, "expm1": np.expm1,
    "sqrt": np.sqrt, "cosh": np.cosh, "sinh": np.sinh, "tanh": np.tanh,
    "abs": np.abs,
}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name,
                  ast.Load, ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div,
                  ast.Pow, ast.USub, ast.UAdd)


def _compile_cgf(expr: str):
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cgf_expr does not parse: {exc}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(
                f"cgf_expr may use +,-,*,/,**, t and {sorted(_ALLOWED_CALLS)}; "
                f"found {type(node).__name__}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_CALLS:
                raise ConfigError("cgf_expr calls must be whitelisted functions")
        if isinstance(node, ast.Name) and node.id != "t" \
                and node.id not in _ALLOWED_CALLS:
            raise ConfigError(f"cgf_expr has unknown name {node.id!r}")
    code = compile(tree, "<cgf_expr>", "eval")

    def cgf(t):
        return eval(code, {"__builtins__": {}}, {**_ALLOWED_CALLS, "t": t})

    return cgf


def _expression_model(expr: str, t_domain) -> Model:
    """Model carrying only the cgf (finite-difference derivatives); supports
    tilt/rate/tail analysis, not densities or sampling."""
    cgf = _compile_cgf(expr)
    lo, hi = float(t_domain[0]), float(t_domain[1])
    if not lo < hi:
        raise ConfigError(f"t_domain must be increasing, got {t_domain}")
    span = min(hi - lo, 2.0)
    h = 1e-5 * span

    def d1(t):
        return (cgf(t + h) - cgf(t - h)) / (2.0 * h)

    def d2(t):
        return (cgf(t + h) - 2.0 * cgf(t) + cgf(t - h)) / (h * h)

    def d3(t):
        return (d2(t + h) - d2(t - h)) / (2.0 * h)

    def d4(t):
        return (d2(t + h) - 2.0 * d2(t) + d2(t - h)) / (h * h)

    def _no_density(*_a, **_kw):
        raise ConfigError("cgf_expr models carry no density or sampler; "
                          "only the tail command supports them")

    return Model(
        name="cgf_expr", base_logpdf=_no_density, u_map=lambda x: x,
        is_identity=True, cgf=cgf, cgf_d1=d1, cgf_d2=d2, cgf_d3=d3, cgf_d4=d4,
        t_domain=(lo, hi), u_support=(-np.inf, np.inf),
        x_support=(-np.inf, np.inf), x_bulk=(-1.0, 1.0),
        sampler_base=_no_density,
    )


def build_model(cfg: dict) -> tuple:
    """Return (model, expr_only) from the config model block."""
    block = _need(cfg, "model")
    if "name" in block:
        return builtin_model(block["name"], **block.get("params", {})), False
    return _expression_model(block["cgf_expr"], block["t_domain"]), True


def build_event(cfg: dict, model: Model):
    block = _need(cfg, "event", "kind", "n")
    kind, n = block["kind"], int(block["n"])
    if kind == "PointSum":
        if "a" not in block:
            raise ConfigError("PointSum event requires 'a'")
        if not model.is_identity:
            raise ConfigError("PointSum requires u(x) = x; use PointFunctional")
        return PointSum(a=float(block["a"]), n=n)
    if kind == "PointFunctional":
        if "u1n" not in block:
            raise ConfigError("PointFunctional event requires 'u1n'")
        return PointFunctional(u_total=float(block["u1n"]), n=n)
    if "a" not in block:
        raise ConfigError("ExceedanceSet event requires 'a'")
    c = block.get("c")
    return ExceedanceSet(a=float(block["a"]), n=n,
                         c=None if c is None else float(c))


# ---------------------------------------------------------------------------
# deterministic output helpers


def _fmt(x) -> str:
    """Canonical cell text: shortest round-trip float repr, plain ints."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(key): _json_ready(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(val) for val in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return [_json_ready(val) for val in obj.tolist()]
    return obj


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    _write_atomic(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    _write_atomic(path, json.dumps(_json_ready(obj), sort_keys=True, indent=2,
                                   allow_nan=False) + "\n")


def _out_dir(cfg: dict) -> str:
    d = cfg.get("output", {}).get("dir", ".")
    os.makedirs(d, exist_ok=True)
    return d


def _formats(cfg: dict):
    return tuple(cfg.get("output", {}).get("formats", ("csv", "json")))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, args) -> int:
    model, expr_only = build_model(cfg)
    if expr_only:
        raise ConfigError("simulate needs a named model with a density")
    event = build_event(cfg, model)
    run = _need(cfg, "run", "k")
    k = int(run["k"])
    L = int(run.get("L", 100))
    seed, _ = _ensure_seed(cfg)
    shift_mode = run.get("shift_mode", "paper_m0")
    method = run.get("method", "tilted")
    bins = int(run.get("bins", 50))
    n = event.n

    values = np.full((L, k), np.nan)
    log_g = np.full(L, -np.inf)
    log_base = np.full(L, -np.inf)
    levels = np.full(L, np.nan)
    ok = np.zeros(L, dtype=bool)
    if method == "tilted":
        for j0 in range(0, L, _CHUNK):
            j1 = min(j0 + _CHUNK, L)
            r = stream(seed, "simulate", n, j0)
            if event.kind == "ExceedanceSet":
                out = sample_large_set_batch(model, event, k, j1 - j0, r,
                                             shift_mode=shift_mode)
                levels[j0:j1] = out["levels"]
            else:
                out = sample_path_batch(model, event, k, j1 - j0, r,
                                        shift_mode=shift_mode)
            values[j0:j1] = out["values"]
            log_g[j0:j1] = out["log_g"]
            log_base[j0:j1] = out["log_base"]
            ok[j0:j1] = out["ok"]
    else:
        # acceptance-rejection variants are scalar-only
        for j in range(L):
            r = stream(seed, "simulate-scalar", n, j)
            try:
                if event.kind == "ExceedanceSet":
                    ps = sample_large_set_path(model, event, k, r,
                                               shift_mode=shift_mode,
                                               method=method)
                    levels[j] = ps.randomized_level
                else:
                    ps = sample_path(model, event, k, r,
                                     shift_mode=shift_mode, method=method)
            except (RangeError, NoConvergence):
                continue
            values[j] = ps.values
            log_g[j] = ps.log_g
            log_base[j] = ps.log_base
            ok[j] = True

    abort_rate = 1.0 - float(np.mean(ok))
    out_dir = _out_dir(cfg)
    formats = _formats(cfg)

    if "csv" in formats:
        header = (["path_id", "randomized_level"]
                  + [f"y_{i + 1}" for i in range(k)] + ["log_g", "log_base"])
        rows = [[j, levels[j], *values[j], log_g[j], log_base[j]]
                for j in range(L)]
        write_csv(os.path.join(out_dir, "paths.csv"), header, rows)

    pool = values[ok].ravel()
    pool = pool[np.isfinite(pool)]
    if pool.size:
        counts, edges = np.histogram(pool, bins=bins)
    else:
        counts, edges = np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
    m0 = event.a if event.kind in ("PointSum", "ExceedanceSet") \
        else event.u_total / n
    t0 = solve_tilt(model, m0)
    xs = np.linspace(edges[0], edges[-1], 257)
    ref = np.exp(np.asarray(model.base_logpdf(xs), dtype=float)
                 + t0 * np.asarray(model.u_map(xs), dtype=float)
                 - float(model.cgf(t0)))
    if "json" in formats:
        write_json(os.path.join(out_dir, "histogram.json"), {
            "command": "simulate", "seed": seed, "model": cfg["model"],
            "event": cfg["event"], "k": k, "L": L, "shift_mode": shift_mode,
            "method": method, "abort_rate": abort_rate,
            "coordinate_pool_size": int(pool.size),
            "histogram": {"bin_edges": edges, "counts": counts},
            "reference_curve": {"tilt": t0, "center": m0, "x": xs,
                                "tilted_density": ref},
        })

    if args.trace and event.kind != "ExceedanceSet":
        _write_trace(os.path.join(out_dir, "trace.csv"), model, event,
                     values, ok, shift_mode)

    if abort_rate > 0.01:
        print(f"simulate: abort rate {abort_rate:.4f} exceeds 1%", file=sys.stderr)
        return 4
    return 0


def _write_trace(path: str, model, event, values, ok, shift_mode) -> None:
    header = ["path_id", "step", "y", "running_u_sum", "m_i", "t_i",
              "alpha", "beta", "log_C_i", "shift"]
    rows = []
    shown = 0
    for j in range(values.shape[0]):
        if not ok[j]:
            continue
        _, states = eval_log_g(model, event, values[j], shift_mode=shift_mode)
        for st in states:
            rows.append([j, st.i, values[j, st.i], st.running_u_sum, st.m_i,
                         st.t_i, st.alpha, st.beta, st.log_C_i, st.shift])
        shown += 1
        if shown >= _TRACE_PATHS:
            break
    write_csv(path, header, rows)


def _kreport_rows(report) -> list:
    if report is None:
        return []
    return [[int(report.ks[j]), report.a_hat[j], report.b_hat[j],
             report.ere_bar[j], report.vre_bar[j], report.ci_lo[j],
             report.ci_hi[j], report.mc_stderr[j], report.vre_raw[j],
             int(report.L_used[j]), int(report.n_discarded[j]),
             bool(report.winsorized[j])] for j in range(len(report.ks))]


def cmd_select_k(cfg: dict, args) -> int:
    model, expr_only = build_model(cfg)
    if expr_only:
        raise ConfigError("select-k needs a named model with a density")
    event = build_event(cfg, model)
    if event.kind == "ExceedanceSet":
        raise ConfigError("select-k conditions on a point event")
    run = _need(cfg, "run", "delta", "L")
    seed, _ = _ensure_seed(cfg)
    delta = float(run["delta"])
    L = int(run["L"])
    k_grid = run.get("k_grid")
    k_step = run.get("k_step")
    shift_mode = run.get("shift_mode", "paper_m0")

    reached = True
    try:
        report = select_k(model, event, delta, L, k_grid=k_grid, rng=seed,
                          shift_mode=shift_mode, k_step=k_step)
        k_delta = report.k_delta
    except NotReached as exc:
        reached = False
        report = exc.report
        k_delta = None
        print(f"select-k: {exc}", file=sys.stderr)

    out_dir = _out_dir(cfg)
    header = ["k", "a_hat", "b_hat", "ere_bar", "vre_bar", "ci_lo", "ci_hi",
              "mc_stderr", "vre_raw", "L_used", "n_discarded", "winsorized"]
    rows = _kreport_rows(report)
    if "csv" in _formats(cfg):
        write_csv(os.path.join(out_dir, "kreport.csv"), header, rows)
    if "json" in _formats(cfg):
        write_json(os.path.join(out_dir, "kreport.json"), {
            "command": "select-k", "seed": seed, "model": cfg["model"],
            "event": cfg["event"], "delta": delta, "L": L,
            "shift_mode": shift_mode, "reached": reached, "k_delta": k_delta,
            "rows": [dict(zip(header, row)) for row in rows],
        })
    return 0


def cmd_estimate_rare(cfg: dict, args) -> int:
    model, expr_only = build_model(cfg)
    if expr_only:
        raise ConfigError("estimate-rare needs a named model with a density")
    event = build_event(cfg, model)
    if event.kind != "ExceedanceSet":
        raise ConfigError("estimate-rare conditions on an ExceedanceSet event")
    run = _need(cfg, "run", "L")
    seed, _ = _ensure_seed(cfg)
    L = int(run["L"])
    kwargs = {"c": event.c,
              "shift_mode": run.get("shift_mode", "paper_m0"),
              "quad_points": int(run.get("quad_points", 32))}
    if "k_grid" in run:
        reports = mse_ratio_curve(model, event.a, event.n, run["k_grid"], L,
                                  seed,
                                  typical_band=float(run.get("typical_band", 0.5)),
                                  **kwargs)
    else:
        if "k" not in run:
            raise ConfigError("estimate-rare needs run.k or run.k_grid")
        reports = [is_estimate(model, event.a, event.n, int(run["k"]), L,
                               seed, **kwargs)]

    out_dir = _out_dir(cfg)
    header = ["k", "estimate", "stderr", "hit_rate", "sample_variance",
              "mse_vs_iid_ratio", "mse_vs_iid_ratio_typical", "aborted",
              "importance_mean", "importance_cv", "importance_max"]
    rows = [[r.k, r.estimate, r.stderr, r.hit_rate, r.sample_variance,
             r.mse_vs_iid_ratio, r.mse_vs_iid_ratio_typical, r.aborted,
             r.importance_factor_stats["mean"], r.importance_factor_stats["cv"],
             r.importance_factor_stats["max"]] for r in reports]
    if "csv" in _formats(cfg):
        write_csv(os.path.join(out_dir, "is_reports.csv"), header, rows)
    if "json" in _formats(cfg):
        write_json(os.path.join(out_dir, "is_reports.json"), {
            "command": "estimate-rare", "seed": seed, "model": cfg["model"],
            "event": cfg["event"], "L": L,
            "reports": [dict(zip(header, row)) for row in rows],
        })
    return 0


def cmd_rao_blackwell(cfg: dict, args) -> int:
    block = _need(cfg, "model", "name")
    if block["name"] != "gamma":
        raise ConfigError("rao-blackwell estimates the Gamma scale; "
                          "model.name must be 'gamma'")
    params = block.get("params", {})
    if "rho" not in params or "theta" not in params:
        raise ConfigError("gamma model needs params.rho and params.theta")
    event_block = _need(cfg, "event", "n")
    run = cfg.get("run", {})
    seed, _ = _ensure_seed(cfg)
    k_grid = tuple(run.get("k_grid", (2, 5, 10, 20, 50)))
    rep = rao_blackwell_gamma(float(params["rho"]), float(params["theta"]),
                              int(event_block["n"]), k_grid=k_grid,
                              L_outer=int(run.get("L_outer", 2000)),
                              L_inner=int(run.get("L_inner", 200)),
                              rng=seed)

    out_dir = _out_dir(cfg)
    if "csv" in _formats(cfg):
        write_csv(os.path.join(out_dir, "rb_variances.csv"),
                  ["k", "var_initial", "var_initial_stderr"],
                  [[int(kk), rep.var_initial_by_k[i],
                    rep.var_initial_stderr_by_k[i]]
                   for i, kk in enumerate(rep.k_grid)])
    if "json" in _formats(cfg):
        write_json(os.path.join(out_dir, "rb_report.json"), {
            "command": "rao-blackwell", "seed": seed, "model": cfg["model"],
            "n": rep.n, "L_outer": rep.L_outer, "L_inner": rep.L_inner,
            "k_grid": rep.k_grid, "var_initial_by_k": rep.var_initial_by_k,
            "var_initial_stderr_by_k": rep.var_initial_stderr_by_k,
            "var_rb": rep.var_rb, "var_rb_raw": rep.var_rb_raw,
            "var_rb_stderr": rep.var_rb_stderr, "cr_bound": rep.cr_bound,
            "theta_rb_mean": rep.theta_rb_mean,
            "inner_aborted": rep.inner_aborted,
        })
    return 0


def cmd_tail(cfg: dict, args) -> int:
    model, _ = build_model(cfg)
    block = _need(cfg, "event", "n")
    if "a" not in block:
        raise ConfigError("tail needs event.a (the exceedance level)")
    a, n = float(block["a"]), int(block["n"])
    t = solve_tilt(model, a)
    payload = {
        "command": "tail", "a": a, "n": n, "tilt": t,
        "rate": rate(model, a),
        "log_tail_prob": log_tail_prob(model, n, a),
    }
    payload["tail_prob"] = math.exp(payload["log_tail_prob"])
    text = json.dumps(_json_ready(payload), sort_keys=True, indent=2)
    print(text)
    if "json" in _formats(cfg):
        write_json(os.path.join(_out_dir(cfg), "tail.json"), payload)
    return 0


def cmd_oracle(cfg: dict, args) -> int:
    block = _need(cfg, "oracle", "op")
    op = block["op"]
    if op == "gamma_tail_exact":
        for key in ("n", "a"):
            if key not in block:
                raise ConfigError(f"oracle op {op} needs {key!r}")
        res = oracles.OracleResult(
            log_value=oracles.gamma_tail_exact(int(block["n"]), float(block["a"])),
            method="closed_form", error_estimate=0.0)
    elif op == "mean_density_by_convolution":
        model, expr_only = build_model(cfg)
        if expr_only:
            raise ConfigError("the convolution oracle needs a named model")
        for key in ("n", "u"):
            if key not in block:
                raise ConfigError(f"oracle op {op} needs {key!r}")
        res = oracles.mean_density_by_convolution(model, int(block["n"]),
                                                  float(block["u"]),
                                                  block.get("grid"))
    else:
        for key in ("a", "n", "path"):
            if key not in block:
                raise ConfigError(f"oracle op {op} needs {key!r}")
        fn = (oracles.gaussian_conditional_logpdf
              if op == "gaussian_conditional_logpdf"
              else oracles.exponential_conditional_logpdf)
        res = oracles.OracleResult(
            log_value=fn(float(block["a"]), int(block["n"]), block["path"]),
            method="closed_form", error_estimate=0.0)
    payload = {"command": "oracle", "op": op,
               "args": {key: val for key, val in block.items() if key != "op"},
               "log_value": res.log_value, "method": res.method,
               "error_estimate": res.error_estimate,
               "grid_spacing": res.grid_spacing}
    print(json.dumps(_json_ready(payload), sort_keys=True, indent=2))
    if "json" in _formats(cfg):
        write_json(os.path.join(_out_dir(cfg), "oracle.json"), payload)
    return 0


def _load_paths(cfg: dict) -> np.ndarray:
    if "paths" in cfg:
        arr = np.asarray(cfg["paths"], dtype=float)
    elif "paths_csv" in cfg:
        fname = cfg["paths_csv"]
        try:
            with open(fname, "r") as fh:
                first = fh.readline()
            skip = 1 if any(c.isalpha() for c in first) else 0
            arr = np.loadtxt(fname, delimiter=",", ndmin=2, skiprows=skip)
        except OSError as exc:
            raise ConfigError(f"cannot read paths_csv {fname}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(
                f"paths_csv {fname} must hold numeric coordinate columns only: {exc}"
            ) from exc
    else:
        raise ConfigError("density-eval needs 'paths' or 'paths_csv'")
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ConfigError(f"paths must form an (L, k) table, got {arr.shape}")
    return arr


def cmd_density_eval(cfg: dict, args) -> int:
    model, expr_only = build_model(cfg)
    if expr_only:
        raise ConfigError("density-eval needs a named model with a density")
    event = build_event(cfg, model)
    run = cfg.get("run", {})
    shift_mode = run.get("shift_mode", "paper_m0")
    paths = _load_paths(cfg)
    if event.kind == "ExceedanceSet":
        log_g, ok = eval_log_g_nA_batch(model, event, paths,
                                        quad_points=int(run.get("quad_points", 32)),
                                        shift_mode=shift_mode)
    else:
        log_g, ok, _ = eval_log_g_batch(model, event, paths,
                                        shift_mode=shift_mode)

    out_dir = _out_dir(cfg)
    if "csv" in _formats(cfg):
        write_csv(os.path.join(out_dir, "log_g.csv"),
                  ["path_id", "log_g", "ok"],
                  [[j, log_g[j], bool(ok[j])] for j in range(paths.shape[0])])
    if "json" in _formats(cfg):
        fin = log_g[ok]
        write_json(os.path.join(out_dir, "log_g.json"), {
            "command": "density-eval", "model": cfg["model"],
            "event": cfg["event"], "shift_mode": shift_mode,
            "count": int(paths.shape[0]), "count_ok": int(np.count_nonzero(ok)),
            "mean_log_g": float(np.mean(fin)) if fin.size else None,
        })
    if args.trace and event.kind != "ExceedanceSet":
        _write_trace(os.path.join(out_dir, "trace.csv"), model, event,
                     paths, ok, shift_mode)
    return 0


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "simulate": cmd_simulate,
    "select-k": cmd_select_k,
    "estimate-rare": cmd_estimate_rare,
    "rao-blackwell": cmd_rao_blackwell,
    "tail": cmd_tail,
    "oracle": cmd_oracle,
    "density-eval": cmd_density_eval,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condwalk",
        description="Sharp conditioned-random-walk approximations: "
                    "simulation, run-length selection, rare-event "
                    "importance sampling, Rao-Blackwellization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH",
                       help="JSON run configuration (see config_schema.json)")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override run.workers (outputs do not depend on it)")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="override output.dir")
        p.add_argument("--trace", action="store_true",
                       help="emit per-step recursion trace for a few paths")
        p.add_argument("--k-step", type=int, default=None, dest="k_step",
                       help="override run.k_step (select-k grid stride)")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if "workers" in cfg.get("run", {}) and int(cfg["run"]["workers"]) < 1:
            raise ConfigError("run.workers must be >= 1")
        return _COMMANDS[args.command](cfg, args)
    except _CONFIG_EXIT as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_EXIT as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except CondwalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
