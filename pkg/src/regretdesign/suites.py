"""Randomized consistency suites.

Each suite takes a list of problems (or a seeded generator) and checks one
identity between independently computed quantities, returning a
:class:`SuiteResult`. The ``validate`` command of the CLI runs them all on a
corpus of problem files plus seeded random instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ci_regret import Envelope, ci_regret
from .errors import GridTooLarge
from .gmm import (
    Candidate,
    alpha_gmm,
    beta_gmm,
    embed_shrinkage,
    gamma_matrix,
    make_moment_model,
    mse_ratio_curve,
    regret_gmm,
    shrinkage_menu,
)
from .model import DesignProblem, FeasibilitySet, make_problem
from .regret_core import (
    ComboOracle,
    allocation_variance,
    compute_alpha,
    compute_beta,
    compute_oracles,
    neyman_allocation,
    regret,
)
from .solver import neyman_design, solve, solve_bounded
from .validation import default_B_grid, grid_oracle, sup_B_scan

TIE_TOL = 1e-9


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    checked: int
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status} {self.name}: {self.checked} checked, worst {self.worst:.3g} (tol {self.tolerance:.3g})"
        return msg + (f"; {self.detail}" if self.detail else "")


def _result(name, errors, tol, detail=""):
    worst = max(errors) if errors else 0.0
    return SuiteResult(name, bool(worst <= tol), len(errors), float(worst), tol, detail)


def _loguniform(rng: np.random.Generator, size, lo=0.1, hi=10.0):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def random_problem(rng: np.random.Generator, p: int | None = None, *, k: int | None = None, norm=None) -> DesignProblem:
    """Diagonal instance with log-uniform ``omega``, ``sigma**2``, ``v**2`` on [0.1, 10]."""
    p = int(p or rng.integers(2, 5))
    k = int(k or rng.integers(1, p + 1))
    kwargs = {"norm": norm} if norm is not None else {}
    return make_problem(
        _loguniform(rng, p),
        _loguniform(rng, p),
        _loguniform(rng, p),
        1.0,
        feasibility=FeasibilitySet.at_most_k(k),
        **kwargs,
    )


def random_problems(seed: int, count: int) -> list[DesignProblem]:
    rng = np.random.default_rng(seed)
    return [random_problem(rng) for _ in range(count)]


def _rel(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(b), 1e-300)


# ---------------------------------------------------------------- suites


def adaptation_regret_suite(problems: Sequence[DesignProblem], rtol: float = 0.01) -> tuple[SuiteResult, SuiteResult]:
    """Sup over radii of the worst-case MSE ratio against ``max(alpha/alpha*, beta/beta*)``.

    Also returns the quasi-convexity check: no interior point of the radius
    curve exceeds the larger endpoint by more than ``1e-9``.
    """
    errs, bumps = [], []
    for problem in problems:
        oracles = compute_oracles(problem)
        sol = solve(problem, oracles=oracles)
        scan = sup_B_scan(problem, sol.x_star, sol.gamma_star, default_B_grid(problem))
        errs.append(_rel(scan.sup, sol.t_star))
        c = scan.curve
        bumps.append(max(0.0, float(c.max() - max(c[0], c[-1]))))
    return (
        _result("sup over radii equals regret", errs, rtol),
        _result("radius curve quasi-convex", bumps, 1e-9),
    )


def neyman_identity_suite(problems: Sequence[DesignProblem], rng: np.random.Generator, pairs_per_problem: int = 1, rtol: float = 1e-12) -> tuple[SuiteResult, SuiteResult]:
    """Budget identity of the Neyman sizes and plug-in variance identity."""
    budget_err, var_err = [], []
    for problem in problems:
        for _ in range(pairs_per_problem):
            s = rng.uniform(0.0, 1.0, problem.p) * (rng.uniform(size=problem.p) < 0.7)
            if not np.any(s):
                s[rng.integers(problem.p)] = rng.uniform(0.05, 1.0)
            n = neyman_allocation(problem, s)
            budget_err.append(_rel(math.fsum(problem.costs * n), problem.budget))
            var_err.append(_rel(allocation_variance(problem, s, n), compute_alpha(problem, s)))
    return _result("Neyman budget identity", budget_err, rtol), _result("Neyman plug-in variance", var_err, rtol)


def dominance_suite(problems: Sequence[DesignProblem]) -> SuiteResult:
    """Regret of the solver's design never exceeds that of the Neyman design."""
    excess = []
    for problem in problems:
        oracles = compute_oracles(problem)
        excess.append(max(0.0, solve(problem, oracles=oracles).t_star - neyman_design(problem, oracles=oracles).t_star))
    return _result("optimal regret <= Neyman regret", excess, 1e-9)


def grid_suite(problems: Sequence[DesignProblem], resolution: int = 101, rtol: float = 0.02) -> SuiteResult:
    """Brute-force grid regret is never better than, and close to, the solver's."""
    errs, skipped = [], 0
    for problem in problems:
        oracles = compute_oracles(problem)
        try:
            g = grid_oracle(problem, resolution, oracles=oracles)
        except GridTooLarge:
            skipped += 1
            continue
        t = solve(problem, oracles=oracles).t_star
        # a grid point beating the solver by more than round-off is a failure
        errs.append(math.inf if g.t < t * (1 - 1e-9) else (g.t - t) / t)
    return _result("grid oracle agrees with solver", errs, rtol, f"{skipped} skipped (too large)" if skipped else "")


def embedding_suite(problems: Sequence[DesignProblem], tol: float = 1e-8) -> SuiteResult:
    """The moment-model embedding reproduces alpha, beta and the regret."""
    errs = []
    for problem in problems:
        oracles = compute_oracles(problem)
        sol = solve(problem, oracles=oracles)
        model, cand = embed_shrinkage(problem, sol.x_star, sol.gamma_star)
        G = gamma_matrix(model.lam, cand.W)
        errs.append(_rel(alpha_gmm(model.omega_mat, G, cand.sigma), sol.breakdown.alpha))
        errs.append(_rel(beta_gmm(model.omega_mat, G, model.experimental_idx, model.norm), sol.breakdown.beta))
        menu = shrinkage_menu(
            problem,
            [(sol.x_star, sol.gamma_star), (oracles.alpha_x, oracles.alpha_gamma), (oracles.beta_x, np.ones(problem.p))],
        )
        ref = regret(problem, sol.x_star, sol.gamma_star, oracles.alpha_star, oracles.beta_star).regret
        errs.append(_rel(regret_gmm(menu, 0).regret, ref))
    return _result("moment embedding matches shrinkage", errs, tol)


def random_moment_model(rng: np.random.Generator, candidates: int = 2, *, d: int | None = None, extra: int | None = None):
    """A random linear moment model with ``candidates`` fixed-covariance entries.

    ``Lambda`` has ``d + extra`` rows; one or two moments are experimental.
    Weight matrices are random diagonal matrices, some with zero entries
    (dropping moments) as long as ``d`` moments remain.
    """
    d = int(d or rng.integers(1, 4))
    pg = d + int(extra if extra is not None else rng.integers(1, 4))
    lam = rng.normal(size=(pg, d))
    omega = rng.normal(size=(1, d))
    exp_idx = sorted(rng.choice(pg, size=int(rng.integers(1, min(2, pg - 1) + 1)), replace=False).tolist())
    cands = []
    for i in range(candidates):
        while True:
            w = _loguniform(rng, pg)
            w[rng.uniform(size=pg) < 0.3] = 0.0
            if np.count_nonzero(w) >= d and np.linalg.cond(lam.T @ (w[:, None] * lam)) < 1e8:
                break
        L = rng.normal(size=(pg, pg)) / math.sqrt(pg)
        cands.append(Candidate(np.diag(w), L @ L.T + 0.1 * np.eye(pg), f"c{i}"))
    return make_moment_model(lam, omega, exp_idx, cands)


def moment_regret_suite(seed: int, count: int, rtol: float = 0.01) -> SuiteResult:
    """Moment-model regret equals the sup over radii of the MSE ratio."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        model = random_moment_model(rng, 2)
        for i in range(2):
            bd = regret_gmm(model, i)
            scale = math.sqrt(bd.alpha_star / bd.beta_star) if bd.beta_star > 0 else 1.0
            grid = np.concatenate([[0.0], np.logspace(-4, 4, 400) * scale])
            sup = float(np.max(mse_ratio_curve(model, i, grid)))
            errs.append(0.0 if math.isinf(bd.regret) and math.isinf(sup) else _rel(sup, bd.regret))
    return _result("moment regret equals sup over radii", errs, rtol)


def _argmin_set(values: Sequence[float], tol: float = TIE_TOL) -> set[int]:
    best = min(values)
    return {i for i, v in enumerate(values) if v <= best + tol * max(1.0, abs(best))}


def interval_equivalence_suite(seed: int, count: int, menu_size: int = 4) -> SuiteResult:
    """For point-identified targets interval-length and MSE regret pick the same candidates."""
    rng = np.random.default_rng(seed)
    mismatches = []
    for _ in range(count):
        model = random_moment_model(rng, menu_size)
        env = Envelope(model.omega_mat[0], model.omega_mat[0])
        ci = [ci_regret(env, model, i).regret for i in range(menu_size)]
        mse = [regret_gmm(model, i).regret for i in range(menu_size)]
        mismatches.append(0.0 if _argmin_set(ci) == _argmin_set(mse) else 1.0)
    return _result("interval and MSE regret share argmin", mismatches, 0.0)


def bounded_bias_suite(problems: Sequence[DesignProblem], rng: np.random.Generator, tol: float = 1e-6) -> tuple[SuiteResult, SuiteResult]:
    """Known-radius design: variance-optimal at zero radius, two-point regret otherwise."""
    zero_err, two_point = [], []
    for problem in problems:
        oracles = compute_oracles(problem)
        z = solve_bounded(problem, 0.0, oracles=oracles)
        ney = neyman_design(problem, oracles=oracles)
        same = z.x_star == ney.x_star
        zero_err.append(_rel(z.breakdown.alpha, ney.breakdown.alpha) if same else math.inf)
        zero = np.zeros(problem.p)
        scale = math.sqrt(compute_alpha(problem, zero) / compute_beta(problem, zero))
        B_bar = scale * float(np.exp(rng.uniform(math.log(0.1), math.log(10.0))))
        sol = solve_bounded(problem, B_bar, oracles=oracles)
        scan = sup_B_scan(problem, sol.x_star, sol.gamma_star, [0.0, B_bar], combo=ComboOracle(problem))
        two_point.append(_rel(scan.sup, sol.t_star))
    return (
        _result("zero radius gives variance-optimal design", zero_err, 1e-9),
        _result("bounded regret equals two-point evaluation", two_point, tol),
    )


def run_all(problems: Sequence[DesignProblem], seed: int = 0, moment_models: int = 20) -> list[SuiteResult]:
    """Every suite on ``problems`` plus seeded random moment models."""
    rng = np.random.default_rng(seed)
    small = [p for p in problems if p.p <= 3]
    out: list[SuiteResult] = []
    out.extend(adaptation_regret_suite(problems))
    out.extend(neyman_identity_suite(problems, rng, pairs_per_problem=5))
    out.append(dominance_suite(problems))
    out.append(grid_suite(small))
    out.append(embedding_suite(problems))
    out.extend(bounded_bias_suite(problems, rng))
    out.append(moment_regret_suite(seed, moment_models))
    out.append(interval_equivalence_suite(seed + 1, moment_models))
    return out
