"""Batch front-end: config-driven simulation, fitting and benchmark runs.

One JSON config file describes the problem (the built-in benchmark or a
custom 1-D problem given by small arithmetic expressions over t and x), the
time grid, the sampling policy or fit basis, sampler and fitting-loop
settings, and the output directory.  Artifacts embed the seed, step size,
path count and a hash of the exact configuration, and rerunning the same
config reproduces them byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import json
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import bench_gbm
from .sde import (AnalyticPolicy, BasisSet, ControlProblem, ParametrizedPolicy,
                  Policy, SimulationError, TimeGrid, ZeroPolicy, simulate)
from .cost import (DegenerateEnsembleError, expected_cost, path_costs,
                   value_estimate, weights)
from .estimator import SingularFitError
from .iis import IISConfig, evaluate_policy, run as iis_run

__all__ = ["ConfigError", "load_config", "main"]


class ConfigError(Exception):
    """Invalid or unknown configuration content."""


# ---------------------------------------------------------------------------
# Expression grammar for custom problems: numbers, t, x, + - * / ^, log, exp.

_ALLOWED_CALLS = {"log", "exp"}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _check_expr(node: ast.AST, src: str):
    if isinstance(node, ast.Expression):
        return _check_expr(node.body, src)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check_expr(node.left, src)
        _check_expr(node.right, src)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _check_expr(node.operand, src)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return
    if isinstance(node, ast.Name) and node.id in ("t", "x"):
        return
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _ALLOWED_CALLS and len(node.args) == 1
            and not node.keywords):
        return _check_expr(node.args[0], src)
    raise ConfigError(f"disallowed construct {ast.dump(node)[:60]!r} in expression {src!r}")


def compile_expression(src: str) -> Callable:
    """Compile an expression over (t, x) to a numpy-vectorized callable."""
    if not isinstance(src, str) or not src.strip():
        raise ConfigError(f"expression must be a non-empty string, got {src!r}")
    py_src = src.replace("^", "**")
    try:
        tree = ast.parse(py_src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc}") from None
    _check_expr(tree, src)
    code = compile(tree, "<config-expression>", "eval")
    env = {"__builtins__": {}}

    def fn(t, x):
        return eval(code, env, {"t": t, "x": x, "log": np.log, "exp": np.exp})

    return fn


# ---------------------------------------------------------------------------
# Config schema

_SCHEMA = {
    "problem": {"type", "Q", "x0", "drift", "diffusion", "running_cost",
                "terminal_cost"},
    "grid": {"t0", "t1", "n_steps"},
    "policy": {"kind", "basis", "coefficients"},
    "sampler": {"n_paths", "seed"},
    "iis": {"n_rounds", "ridge", "damping", "control_interval", "warm_start"},
    "bench": {"seeds", "epsilons"},
    "output": {"dir"},
}

_DEFAULTS = {
    "problem": {"type": "gbm", "Q": 10.0, "x0": 0.5},
    "grid": {"t0": 0.0, "t1": 1.0, "n_steps": 1000},
    "policy": {"kind": "zero"},
    "sampler": {"n_paths": 10_000, "seed": 1},
    "iis": {"n_rounds": 2, "ridge": None, "damping": 1.0,
            "control_interval": bench_gbm.CONTROL_INTERVAL},
    "bench": {"seeds": list(bench_gbm.ACCEPT_SEEDS),
              "epsilons": [0.05, 0.1, 0.2, 0.4, 0.6, 0.8]},
    "output": {"dir": "out"},
}


def validate_config(raw: dict) -> dict:
    """Merge defaults and reject unknown sections or keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(raw[section], dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        cfg[section] = dict(defaults)
        cfg[section].update(raw.get(section, {}))
    ptype = cfg["problem"]["type"]
    if ptype not in ("gbm", "custom"):
        raise ConfigError(f"problem.type must be 'gbm' or 'custom', got {ptype!r}")
    if ptype == "custom":
        for key in ("drift", "diffusion", "running_cost", "terminal_cost"):
            if key not in cfg["problem"] or cfg["problem"][key] is None:
                raise ConfigError(f"custom problem requires problem.{key}")
        if "x0" not in cfg["problem"]:
            raise ConfigError("custom problem requires problem.x0")
    for eps in cfg["bench"]["epsilons"]:
        if not 0 <= eps < 1:
            raise ConfigError(f"bench.epsilons entries must lie in [0, 1), got {eps}")
    if cfg["sampler"]["n_paths"] < 1:
        raise ConfigError("sampler.n_paths must be >= 1")
    if cfg["sampler"]["seed"] < 0:
        raise ConfigError("sampler.seed must be >= 0")
    return cfg


def load_config(path: Optional[str], overrides: argparse.Namespace) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} line {exc.lineno}: {exc.msg}")
    cfg = validate_config(raw)
    if getattr(overrides, "seed", None) is not None:
        cfg["sampler"]["seed"] = overrides.seed
    if getattr(overrides, "paths", None) is not None:
        cfg["sampler"]["n_paths"] = overrides.paths
    if getattr(overrides, "out", None) is not None:
        cfg["output"]["dir"] = overrides.out
    if getattr(overrides, "dt", None) is not None:
        g = cfg["grid"]
        span = g["t1"] - g["t0"]
        n = round(span / overrides.dt)
        if n < 1 or abs(n * overrides.dt - span) > 1e-9 * max(1.0, abs(span)):
            raise ConfigError(f"--dt {overrides.dt} does not tile horizon {span}")
        g["n_steps"] = int(n)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Problem / policy construction

def build_problem(cfg: dict) -> ControlProblem:
    """gbm runs the benchmark's log-coordinate twin; custom is 1-D in x."""
    grid = TimeGrid(cfg["grid"]["t0"], cfg["grid"]["t1"], cfg["grid"]["n_steps"])
    p = cfg["problem"]
    if p["type"] == "gbm":
        spec = bench_gbm.GBMSpec(Q=p["Q"], x0=p["x0"], t0=grid.t0, t1=grid.t1,
                                 n_steps=grid.n_steps)
        return bench_gbm.make_log_problem(spec)
    b = compile_expression(p["drift"])
    sig = compile_expression(p["diffusion"])
    V = compile_expression(p["running_cost"])
    Phi = compile_expression(p["terminal_cost"])

    def drift(t, x):
        return np.broadcast_to(np.asarray(b(t, x[..., 0]), float)[..., None], x.shape)

    def diffusion(t, x):
        return np.broadcast_to(
            np.asarray(sig(t, x[..., 0]), float)[..., None, None], x.shape + (1,))

    def running(t, x):
        return np.broadcast_to(np.asarray(V(t, x[..., 0]), float), x.shape[:1])

    def terminal(x):
        return np.broadcast_to(np.asarray(Phi(0.0, x[..., 0]), float), x.shape[:1])

    return ControlProblem(dim_x=1, dim_w=1, drift=drift, diffusion=diffusion,
                          running_cost=running, terminal_cost=terminal,
                          x0=np.array([float(p["x0"])]), grid=grid)


def _basis_for(cfg: dict) -> BasisSet:
    name = cfg["policy"].get("basis")
    if name is None:
        raise ConfigError("policy.basis required for this operation")
    if cfg["problem"]["type"] == "gbm":
        try:
            return bench_gbm.column_basis(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    # custom problems: raw features of the state itself
    if name == "const":
        return BasisSet(1, lambda t, x: np.ones((x.shape[0], 1)), "const")
    if name == "affine":
        return BasisSet(2, lambda t, x: np.concatenate(
            [np.ones((x.shape[0], 1)), x[:, :1]], axis=1), "affine")
    if name == "quadratic":
        return BasisSet(3, lambda t, x: np.concatenate(
            [np.ones((x.shape[0], 1)), x[:, :1], x[:, :1] ** 2], axis=1), "quadratic")
    if name == "log":
        return BasisSet(1, lambda t, x: np.log(x[:, :1]), "log")
    raise ConfigError(f"unknown basis {name!r}")


def load_coefficients(path: str, basis: BasisSet, grid: TimeGrid) -> ParametrizedPolicy:
    """Rebuild a parametrized policy from a persisted coefficient CSV."""
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError:
        raise ConfigError(f"coefficient file not found: {path}")
    K = table.shape[0]
    n_coef = table.shape[1] - 1
    if n_coef % basis.k_basis != 0:
        raise ConfigError(
            f"coefficient file has {n_coef} columns per node, "
            f"not a multiple of k_basis={basis.k_basis}")
    m = n_coef // basis.k_basis
    A = table[:, 1:].reshape(K, m, basis.k_basis)
    ctrl_grid = TimeGrid(grid.t0, grid.t1, K)
    expected = ctrl_grid.times[:-1]
    if not np.allclose(table[:, 0], expected, atol=1e-9):
        raise ConfigError(f"coefficient node times in {path} do not tile the horizon")
    return ParametrizedPolicy(coefficients=A, basis=basis, ctrl_grid=ctrl_grid)


def build_policy(cfg: dict, problem: ControlProblem) -> Policy:
    kind = cfg["policy"]["kind"]
    if kind == "zero":
        return ZeroPolicy(problem.dim_w)
    if kind == "gbm_optimal":
        if cfg["problem"]["type"] != "gbm":
            raise ConfigError("policy.kind gbm_optimal requires problem.type gbm")
        p = cfg["problem"]
        spec = bench_gbm.GBMSpec(Q=p["Q"], x0=p["x0"], t0=problem.grid.t0,
                                 t1=problem.grid.t1, n_steps=problem.grid.n_steps)
        return bench_gbm.log_optimal_policy(spec)
    if kind == "basis":
        coeff_path = cfg["policy"].get("coefficients")
        if coeff_path is None:
            raise ConfigError("policy.kind basis requires policy.coefficients "
                              "(fit one with the fit subcommand)")
        return load_coefficients(coeff_path, _basis_for(cfg), problem.grid)
    raise ConfigError(f"unknown policy.kind {kind!r}")


# ---------------------------------------------------------------------------
# Subcommands

def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _meta(cfg: dict) -> dict:
    grid = cfg["grid"]
    dt = (grid["t1"] - grid["t0"]) / grid["n_steps"]
    return {
        "seed": cfg["sampler"]["seed"],
        "dt": dt,
        "n_paths": cfg["sampler"]["n_paths"],
        "config_sha256": config_hash(cfg),
        "config": cfg,
    }


def cmd_simulate(cfg: dict, threads: int = 1) -> dict:
    problem = build_problem(cfg)
    policy = build_policy(cfg, problem)
    ens = simulate(problem, policy, cfg["sampler"]["n_paths"],
                   cfg["sampler"]["seed"], n_workers=threads)
    costs = path_costs(ens, problem)
    ws = weights(costs)
    summary = {
        "ES": expected_cost(costs),
        "J": value_estimate(costs),
        "var_alpha": ws.variance,
        "lambda": ws.ess_fraction,
        **_meta(cfg),
    }
    _write_json(Path(cfg["output"]["dir"]) / "simulate_summary.json", summary)
    return summary


def cmd_fit(cfg: dict) -> dict:
    problem = build_problem(cfg)
    basis = _basis_for(cfg)
    ii = cfg["iis"]
    iis_cfg = IISConfig(n_paths=cfg["sampler"]["n_paths"], n_rounds=ii["n_rounds"],
                        seed=cfg["sampler"]["seed"], ridge=ii["ridge"],
                        damping=ii["damping"],
                        control_interval=ii["control_interval"])
    warm = None
    if ii.get("warm_start"):
        warm = load_coefficients(ii["warm_start"], basis, problem.grid)
    policy, reports = iis_run(problem, basis, None, iis_cfg, warm_start=warm)

    out_dir = Path(cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    K, m, kb = policy.coefficients.shape
    header = ["t"] + [f"A_{i}_{j}" for i in range(m) for j in range(kb)]
    lines = [",".join(header)]
    for k in range(K):
        vals = [f"{policy.ctrl_grid.times[k]:.10g}"]
        vals += [f"{v:.10g}" for v in policy.coefficients[k].ravel()]
        lines.append(",".join(vals))
    (out_dir / "fit_coefficients.csv").write_text("\n".join(lines) + "\n")

    eval_seed = int(np.random.SeedSequence(
        entropy=cfg["sampler"]["seed"], spawn_key=(2**31,)).generate_state(1, np.uint64)[0])
    oos = evaluate_policy(problem, policy, cfg["sampler"]["n_paths"], eval_seed)
    summary = {
        "rounds": [{
            "round": r.round_index,
            "ES": r.expected_cost,
            "var_alpha": r.variance,
            "lambda": r.ess_fraction,
            "J": r.value,
        } for r in reports],
        "out_of_sample": oos,
        **_meta(cfg),
    }
    _write_json(out_dir / "fit_summary.json", summary)
    return summary


def cmd_bench(which: str, cfg: dict) -> dict:
    p = cfg["problem"]
    grid = cfg["grid"]
    spec = bench_gbm.GBMSpec(Q=p.get("Q", 10.0), x0=p.get("x0", 0.5),
                             t0=grid["t0"], t1=grid["t1"], n_steps=grid["n_steps"])
    out_dir = Path(cfg["output"]["dir"])
    n_paths = cfg["sampler"]["n_paths"]
    if which == "table1":
        rows = bench_gbm.reproduce_table1(tuple(cfg["bench"]["seeds"]), n_paths,
                                          spec, out_dir / "table1.csv")
        artifacts = ["table1.csv"]
    elif which == "figure1":
        rows = bench_gbm.reproduce_figure1(tuple(cfg["bench"]["epsilons"]), n_paths,
                                           cfg["sampler"]["seed"], spec,
                                           out_dir / "figure1.csv")
        artifacts = ["figure1.csv"]
    elif which == "figure2":
        controls, hist = bench_gbm.reproduce_figure2(n_paths, cfg["sampler"]["seed"],
                                                     spec, out_dir)
        rows = {"controls": len(controls), "hist_bins": len(hist)}
        artifacts = ["figure2_controls.csv", "figure2_hist.csv"]
    else:
        raise ConfigError(f"unknown bench target {which!r}")
    summary = {"bench": which, "rows": rows, "artifacts": artifacts, **_meta(cfg)}
    _write_json(out_dir / f"bench_{which}_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="picontrol",
        description="Path-integral stochastic optimal control toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "simulate one ensemble and summarize costs/weights"),
                            ("fit", "fit feedback coefficients by iterative importance sampling"),
                            ("bench", "reproduce benchmark tables/figures as CSV")):
        sp = sub.add_parser(name, help=help_text)
        if name == "bench":
            sp.add_argument("which", choices=["table1", "figure1", "figure2"])
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for path generation "
                             "(output is identical for any value)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.command == "simulate":
            cmd_simulate(cfg, threads=max(1, args.threads))
        elif args.command == "fit":
            cmd_fit(cfg)
        else:
            cmd_bench(args.which, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, DegenerateEnsembleError, SingularFitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
