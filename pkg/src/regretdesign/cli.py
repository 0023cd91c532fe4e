"""Command-line interface.

Usage::

    regretdesign solve --input problem.json [--budget N] [--max-arms K]
                       [--norm linf|l1|l2|weighted:k1,k2,...] [--gamma-policy free|experiment_only]
                       [--bias-bound B] [--output solution.csv]
    regretdesign oracles --input problem.json [--output oracles.csv]
    regretdesign sweep --input problem.json --grid 100:2000:100 [--output sweep.csv] [--threads T]
    regretdesign ci --input moment_model.json [--bias-bound 0,0.5,1] [--output ci.csv]
    regretdesign simulate --input problem.json [--reps R] [--seed S] [--bias-bound B] [--output mc.csv]
    regretdesign replicate-ge [--grid ...] [--max-arms K] [--output ge.csv]
    regretdesign replicate-sites [--grid ...] [--max-arms K] [--bias-bound B] [--output sites.csv]
    regretdesign validate [--input file-or-directory] [--random N] [--seed S] [--output suites.csv]

Problem and moment-model file formats are described in :mod:`regretdesign.io`.
``--grid`` accepts ``start:stop:step`` (inclusive) or a comma list. The
default thread count comes from ``REGRETDESIGN_THREADS`` (1 if unset).

Exit status: 0 on success, 2 on configuration errors (bad flags, unreadable or
invalid input), 3 when the design program is infeasible or fails to converge,
4 when ``validate`` finds a failing suite.

CSV columns, in order (``<arm>`` expands to one column per arm, in arm order):

``solve``
    t_star, alpha, alpha_star, beta, beta_star, binding, bias_bound,
    x_<arm>..., gamma_<arm>..., n_<arm>...
``oracles``
    alpha_star, beta_star, alpha_x_<arm>..., alpha_gamma_<arm>..., beta_x_<arm>...
``sweep``, ``replicate-ge``, ``replicate-sites``
    [max_arms,] n_tot, then for prefix ``opt`` and then ``neyman``:
    <prefix>_x_<arm>..., <prefix>_n_<arm>..., <prefix>_gamma_<arm>...,
    <prefix>_alpha, <prefix>_beta, <prefix>_regret
``ci``
    candidate, label, A, A_star, C, C_star, regret, binding, B, loss, lower, upper
    (``lower``/``upper`` are empty when the model has no ``theta_hat``)
``simulate``
    scenario, B, empirical_mse, std_error, theoretical_mse, z_score,
    mean_error, mean_error_se, theoretical_bias, reps, seed
``validate``
    suite, passed, checked, worst, tolerance, detail
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .apps import build_ge_problem, build_site_problem, load_ge_calibration, load_site_table, mse_ratio_report, sweep
from .ci_regret import ci_loss, ci_regret, worst_case_interval
from .errors import DesignError, SolverError
from .gmm import gamma_matrix
from .model import DesignProblem, FeasibilitySet, GammaPolicy, NormSpec, validate_problem
from .regret_core import compute_alpha, compute_beta, compute_oracles
from .solver import solve, solve_bounded
from .suites import random_problems, run_all
from .validation import monte_carlo_mse, worst_case_bias

THREADS_ENV = "REGRETDESIGN_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VALIDATION = 4


class ConfigError(Exception):
    """Bad command-line value."""


# ----------------------------------------------------------------- parsing


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (stop included when hit) or ``a,b,c``."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"--grid: need start <= stop and step > 0, got {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--grid: cannot parse {text!r}") from exc


def parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag}: cannot parse {text!r}") from exc
    if not values or any(not (math.isfinite(v) and v >= 0) for v in values):
        raise ConfigError(f"{flag}: values must be finite and nonnegative, got {text!r}")
    return values


def parse_norm(text: str) -> NormSpec:
    kind, _, weights = text.partition(":")
    kind = kind.strip().lower()
    if kind == "weighted":
        if not weights:
            raise ConfigError("--norm: weighted needs weights, e.g. weighted:1,2,0.5")
        try:
            return NormSpec.weighted(float(w) for w in weights.split(","))
        except ValueError as exc:
            raise ConfigError(f"--norm: cannot parse weights {weights!r}") from exc
    if weights:
        raise ConfigError(f"--norm: only the weighted norm takes weights, got {text!r}")
    return NormSpec(kind)


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _threads(args) -> int:
    n = args.threads if args.threads is not None else default_threads()
    if n < 1:
        raise ConfigError(f"--threads must be positive, got {n}")
    return n


def apply_overrides(problem: DesignProblem, args) -> DesignProblem:
    """Apply ``--budget``, ``--max-arms``, ``--norm`` and ``--gamma-policy``."""
    changes = {}
    if getattr(args, "budget", None) is not None:
        changes["budget"] = args.budget
    if getattr(args, "max_arms", None) is not None:
        changes["feasibility"] = FeasibilitySet.at_most_k(args.max_arms)
    if getattr(args, "norm", None) is not None:
        changes["norm"] = parse_norm(args.norm)
    if getattr(args, "gamma_policy", None) is not None:
        changes["gamma_policy"] = GammaPolicy(args.gamma_policy)
    if not changes:
        return problem
    return validate_problem(dataclasses.replace(problem, **changes))


def _load(args) -> DesignProblem:
    if not args.input:
        raise ConfigError("--input is required")
    return apply_overrides(io.load_problem(args.input), args)


def _emit(rows, columns, output) -> None:
    text = io.rows_to_csv(rows, columns)
    if output:
        io.atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    problem = _load(args)
    if args.bias_bound is not None:
        bounds = parse_floats(args.bias_bound, "--bias-bound")
        if len(bounds) != 1:
            raise ConfigError("--bias-bound: solve takes a single radius")
        sol = solve_bounded(problem, bounds[0])
    else:
        sol = solve(problem)
    names = problem.arm_names
    sys.stdout.write(io.solution_report(sol, names))
    if args.output:
        io.write_csv(args.output, [io.solution_to_row(sol, names)], io.solution_columns(names))
    return EXIT_OK


def cmd_oracles(args) -> int:
    problem = _load(args)
    o = compute_oracles(problem)
    names = problem.arm_names
    row = {"alpha_star": o.alpha_star, "beta_star": o.beta_star}
    row.update({f"alpha_x_{n}": o.alpha_x[j] for j, n in enumerate(names)})
    row.update({f"alpha_gamma_{n}": float(o.alpha_gamma[j]) for j, n in enumerate(names)})
    row.update({f"beta_x_{n}": o.beta_x[j] for j, n in enumerate(names)})
    _emit([row], list(row), args.output)
    return EXIT_OK


def _sweep_rows(builder, grid, workers, max_arms=None):
    rows = []
    for r in sweep(builder, grid, workers=workers):
        d = r.as_dict()
        rows.append({"max_arms": max_arms, **d} if max_arms is not None else d)
    return rows


def cmd_sweep(args) -> int:
    problem = _load(args)
    if not args.grid:
        raise ConfigError("--grid is required for sweep")
    rows = _sweep_rows(problem.with_budget, parse_grid(args.grid), _threads(args))
    _emit(rows, list(rows[0]), args.output)
    return EXIT_OK


def cmd_ci(args) -> int:
    if not args.input:
        raise ConfigError("--input is required")
    model, envelope, theta_hat = io.moment_model_from_dict(io.read_json(args.input))
    if envelope is None:
        raise ConfigError("ci: the moment model needs an 'envelope'")
    bounds = parse_floats(args.bias_bound, "--bias-bound") if args.bias_bound is not None else [0.0]
    rows = []
    for i, cand in enumerate(model.candidates):
        bd = ci_regret(envelope, model, i)
        G = gamma_matrix(model.lam, cand.W)
        for B in bounds:
            lower = upper = ""
            if theta_hat is not None:
                iv = worst_case_interval(envelope, G, cand.sigma, model.experimental_idx, model.norm, theta_hat, B)
                lower, upper = iv.lower, iv.upper
            rows.append(
                {
                    "candidate": i,
                    "label": cand.label,
                    "A": bd.alpha,
                    "A_star": bd.alpha_star,
                    "C": bd.beta,
                    "C_star": bd.beta_star,
                    "regret": bd.regret,
                    "binding": bd.binding.value,
                    "B": B,
                    "loss": ci_loss(bd.alpha, bd.beta, B),
                    "lower": lower,
                    "upper": upper,
                }
            )
    _emit(rows, list(rows[0]), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem = _load(args)
    sol = solve(problem)
    s = sol.s_star
    if args.bias_bound is not None:
        bounds = parse_floats(args.bias_bound, "--bias-bound")
    else:
        zero = np.zeros(problem.p)
        bounds = [math.sqrt(compute_alpha(problem, zero) / compute_beta(problem, zero))]
    workers = _threads(args)
    rows = []
    scenarios = [("no_bias", 0.0)] + [("worst_case", B) for B in bounds]
    for name, B in scenarios:
        b = worst_case_bias(problem, s, B)
        rep = monte_carlo_mse(problem, sol.x_star, sol.gamma_star, b, reps=args.reps, seed=args.seed, workers=workers)
        rows.append(
            {
                "scenario": name,
                "B": B,
                "empirical_mse": rep.empirical_mse,
                "std_error": rep.std_error,
                "theoretical_mse": rep.theoretical_mse,
                "z_score": rep.z_score,
                "mean_error": rep.mean_error,
                "mean_error_se": rep.mean_error_se,
                "theoretical_bias": rep.theoretical_bias,
                "reps": rep.reps,
                "seed": rep.seed,
            }
        )
    _emit(rows, list(rows[0]), args.output)
    return EXIT_OK


def _arm_set(x, names) -> str:
    chosen = [n for n, v in zip(names, x) if v]
    return "+".join(chosen) if chosen else "(none)"


def _summarize(rows, names, stream) -> None:
    """One line per run of constant optimal arm set along the grid."""
    runs = []
    for r in rows:
        x = tuple(r.optimal.x_star)
        if runs and runs[-1][0] == x:
            runs[-1][2] = r.n_tot
        else:
            runs.append([x, r.n_tot, r.n_tot])
    for x, lo, hi in runs:
        stream.write(f"  n_tot {lo:g}-{hi:g}: {_arm_set(x, names)}\n")


def _replicate(builder, names, grid, ks, workers, args, label) -> int:
    all_rows = []
    for k in ks:
        results = sweep(lambda n, k=k: builder(n, k), grid, workers=workers)
        sys.stderr.write(f"{label}, at most {k} arm(s), optimal selection by budget:\n")
        _summarize(results, names, sys.stderr)
        all_rows.extend({"max_arms": k, **r.as_dict()} for r in results)
    if args.output:
        io.write_csv(args.output, all_rows, list(all_rows[0]))
    else:
        sys.stdout.write(io.rows_to_csv(all_rows, list(all_rows[0])))
    return EXIT_OK


def cmd_replicate_ge(args) -> int:
    cal = load_ge_calibration(args.input) if args.input else load_ge_calibration()
    grid = parse_grid(args.grid or "100:2000:100")
    ks = [args.max_arms] if args.max_arms is not None else [1, 2]
    return _replicate(lambda n, k: build_ge_problem(cal, n, k), list(cal.arm_names), grid, ks, _threads(args), args, "GE target")


def cmd_replicate_sites(args) -> int:
    table = load_site_table(args.input) if args.input else load_site_table()
    grid = parse_grid(args.grid or "4:100:4")
    ks = [args.max_arms] if args.max_arms is not None else [1, 2]
    code = _replicate(lambda n, k: build_site_problem(table, n, k), list(table.names), grid, ks, _threads(args), args, "Site selection")
    if args.bias_bound is not None:
        for B in parse_floats(args.bias_bound, "--bias-bound"):
            for k in ks:
                rep = mse_ratio_report(build_site_problem(table, 52, k), B)
                parts = ", ".join(f"{lab} {val:.4g}" for lab, val in rep.items())
                sys.stderr.write(f"worst-case MSE ratio at B={B:g}, n1=52, at most {k} area(s): {parts}\n")
    return code


def _corpus(path: str | None) -> list[DesignProblem]:
    if path is None:
        root = resources.files("regretdesign").joinpath("data", "instances")
        files = sorted((f for f in root.iterdir() if f.name.endswith(".json")), key=lambda f: f.name)
        return [io.problem_from_dict(json.loads(f.read_text(encoding="utf-8"))) for f in files]
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise ConfigError(f"--input: no .json files in {p}")
        return [io.load_problem(f) for f in files]
    return [io.load_problem(p)]


def cmd_validate(args) -> int:
    problems = _corpus(args.input)
    if args.random:
        problems += random_problems(args.seed, args.random)
    results = run_all(problems, seed=args.seed)
    for r in results:
        sys.stdout.write(r.line() + "\n")
    failed = [r for r in results if not r.passed]
    sys.stdout.write(f"{len(results) - len(failed)}/{len(results)} suites passed on {len(problems)} problems\n")
    if args.output:
        rows = [
            {"suite": r.name, "passed": r.passed, "checked": r.checked, "worst": r.worst, "tolerance": r.tolerance, "detail": r.detail}
            for r in results
        ]
        io.write_csv(args.output, rows)
    return EXIT_VALIDATION if failed else EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regretdesign", description="Regret-optimal combination of experimental and observational evidence.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help, *, inp=True, overrides=False, bias=False, grid=False, threads=False, mc=False):
        p = sub.add_parser(name, help=help, description=help)
        if inp:
            p.add_argument("--input", help="input file")
        p.add_argument("--output", help="CSV output path (default: standard output)")
        if overrides:
            p.add_argument("--budget", type=float, help="override the budget")
            p.add_argument("--max-arms", type=int, help="allow at most this many arms")
            p.add_argument("--norm", help="linf, l1, l2 or weighted:k1,k2,...")
            p.add_argument("--gamma-policy", choices=[g.value for g in GammaPolicy])
        if bias:
            p.add_argument("--bias-bound", help="bias radius, or comma list of radii")
        if grid:
            p.add_argument("--grid", help="budgets as start:stop:step or a comma list")
        if threads:
            p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        if mc:
            p.add_argument("--reps", type=int, default=100_000, help="Monte Carlo replications")
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    add("solve", cmd_solve, "regret-optimal design", overrides=True, bias=True)
    add("oracles", cmd_oracles, "variance and bias oracles with their designs", overrides=True)
    add("sweep", cmd_sweep, "optimal and Neyman designs along a budget grid", overrides=True, grid=True, threads=True)
    add("ci", cmd_ci, "interval-length regret of a moment-model menu", bias=True)
    add("simulate", cmd_simulate, "Monte Carlo MSE of the optimal design", overrides=True, bias=True, threads=True, mc=True)
    ge = add("replicate-ge", cmd_replicate_ge, "general-equilibrium application", grid=True, threads=True)
    ge.add_argument("--max-arms", type=int, help="only this arm limit (default: 1 and 2)")
    st = add("replicate-sites", cmd_replicate_sites, "site-selection application", grid=True, threads=True, bias=True)
    st.add_argument("--max-arms", type=int, help="only this area limit (default: 1 and 2)")
    v = add("validate", cmd_validate, "run the consistency suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--random", type=int, default=20, help="extra seeded random problems (default 20)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverError as exc:
        sys.stderr.write(f"regretdesign: {type(exc).__name__}: {exc}\n")
        return EXIT_INFEASIBLE
    except (ConfigError, DesignError, ValueError, OSError) as exc:
        sys.stderr.write(f"regretdesign: {type(exc).__name__}: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
