"""Acceptance criteria, run at their stated tolerances and time limits.

Each test records one PASS/FAIL line; the lines are collected in the
"acceptance criteria" section of the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest

from regretdesign.apps import build_ge_problem, build_site_problem
from regretdesign.model import FeasibilitySet
from regretdesign.regret_core import compute_alpha, compute_beta, compute_oracles
from regretdesign.solver import neyman_design, solve
from regretdesign.suites import (
    adaptation_regret_suite,
    bounded_bias_suite,
    embedding_suite,
    interval_equivalence_suite,
    moment_regret_suite,
    neyman_identity_suite,
    random_problem,
)
from regretdesign.validation import TwoParamInstance, gamma_star_2param, monte_carlo_mse, two_param_oracles, worst_case_bias


def _instances(seed: int, count: int):
    """p in {2, 3, 4}; log-uniform omega, sigma**2, v**2 on [0.1, 10]; at most k of p arms."""
    rng = np.random.default_rng(seed)
    return [random_problem(rng) for _ in range(count)]


@pytest.fixture(scope="module")
def instances_200():
    return _instances(2024, 200)


@pytest.fixture(scope="module")
def adaptation_results(instances_200):
    start = time.perf_counter()
    results = adaptation_regret_suite(instances_200, rtol=0.01)
    return results, time.perf_counter() - start


def test_criterion_01_adaptation_regret_equality(adaptation_results, acceptance):
    (equality, _), elapsed = adaptation_results
    ok = equality.passed and equality.checked == 200 and elapsed < 60
    acceptance(1, "sup over radii equals max(alpha/alpha*, beta/beta*)", ok, f"{equality.checked} instances, worst rel err {equality.worst:.2e} (tol 1e-2), {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_02_quasi_convexity(adaptation_results, acceptance):
    (_, bumps), _ = adaptation_results
    ok = bumps.passed and bumps.checked == 200
    acceptance(2, "radius curve is quasi-convex", ok, f"{bumps.checked} curves, worst interior excess {bumps.worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_03_neyman_identities(acceptance):
    problems = _instances(3, 200)
    rng = np.random.default_rng(33)
    start = time.perf_counter()
    budget, variance = neyman_identity_suite(problems, rng, pairs_per_problem=5, rtol=1e-12)
    elapsed = time.perf_counter() - start
    ok = budget.passed and variance.passed and budget.checked == variance.checked == 1000 and elapsed < 5
    acceptance(
        3,
        "Neyman budget and plug-in variance identities",
        ok,
        f"{budget.checked} pairs, worst budget err {budget.worst:.1e}, worst variance err {variance.worst:.1e} (tol 1e-12), {elapsed:.2f}s (limit 5s)",
    )
    assert ok


def _two_param_sweep():
    """Three axes of 30 points around the reference two-parameter configurations."""
    cases = []
    for w2 in np.linspace(0.1, 2.0, 30):  # omega_2 axis: omega_1 = 1, v = (1, 0.5), sigma = (1, 1)
        cases.append(("omega_2", (1.0, w2), (1.0, 1.0), (1.0, 0.25)))
    for v in np.linspace(0.5, 2.0, 30):  # v_2 axis: omega = (0.9, 1), v_1 = 1, sigma = (1, 1)
        cases.append(("v_2", (0.9, 1.0), (1.0, 1.0), (1.0, v * v)))
    for s in np.linspace(0.5, 2.0, 30):  # sigma_2 axis: omega = (0.9, 1), v = (1, 1), sigma_1 = 1
        cases.append(("sigma_2", (0.9, 1.0), (1.0, s * s), (1.0, 1.0)))
    return cases


def test_criterion_04_two_parameter_closed_form(acceptance):
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for _, omega, sigma2, v2 in _two_param_sweep():
        for arm in (1, 2):
            inst = TwoParamInstance(omega, sigma2, v2, arm)
            a_star, b_star = two_param_oracles(inst)
            problem = inst.to_problem()
            oracles = compute_oracles(problem)
            assert oracles.alpha_star == pytest.approx(a_star, rel=1e-12)
            assert oracles.beta_star == pytest.approx(b_star, rel=1e-12)
            x = (1, 0) if arm == 1 else (0, 1)
            sol = solve(problem.with_feasibility(FeasibilitySet.explicit([x])), oracles=oracles)
            worst = max(worst, abs(sol.gamma_star[arm - 1] - gamma_star_2param(inst, a_star, b_star)))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30
    acceptance(4, "solver shrinkage matches the two-parameter closed form", ok, f"{checked} (point, arm) cases on 3 axes x 30, worst |dgamma| {worst:.1e} (tol 1e-4), {elapsed:.1f}s (limit 30s)")
    assert ok


def _names(problem, sol):
    return {problem.arm_names[j] for j in sol.selected}


def _primary(problem, sol):
    return problem.arm_names[int(np.argmax(sol.n_star))]


def test_criterion_05_ge_arm_choices(ge_cal, acceptance):
    small = [n for n in range(100, 401, 50)]
    one_arm = [_names(pr, solve(pr)) for pr in (build_ge_problem(ge_cal, n, 1) for n in small)]
    a = all(s == {"UCT"} for s in one_arm)

    two_small = [_names(pr, solve(pr)) for pr in (build_ge_problem(ge_cal, n, 2) for n in (100, 200, 300))]
    grid = np.arange(100, 2001, 10)
    primary = []
    for n in grid:
        pr = build_ge_problem(ge_cal, float(n), 2)
        primary.append(_primary(pr, solve(pr)) == "Job")
    primary = np.array(primary)
    switch = float(grid[np.argmax(primary)]) if primary.any() else math.nan
    stays = bool(primary.any() and primary[np.argmax(primary):].all())
    b = all(s == {"UCT", "CCT"} for s in two_small) and 400 <= switch <= 600 and stays

    pr = build_ge_problem(ge_cal, 1000, 2)
    sol = solve(pr)
    job_share = float(sol.n_star[pr.arm_names.index("Job")] / sol.n_star.sum())
    c = job_share >= 0.8

    ok = a and b and c
    acceptance(
        5,
        "GE arm choices",
        ok,
        f"(a) one arm n<=400 -> UCT: {a}; (b) two arms small n -> UCT+CCT, Job primary from n={switch:g} on: {b}; (c) Job share at n=1000 {job_share:.3f} (>= 0.8): {c}",
    )
    assert ok


def test_criterion_06_ge_neyman_comparison(ge_cal, acceptance):
    parts, ok = [], True
    for k, (lo, hi) in ((1, (1.1, 1.8)), (2, (3.2, 6.0))):
        pr = build_ge_problem(ge_cal, 1000, k)
        o = compute_oracles(pr)
        opt, ney = solve(pr, oracles=o), neyman_design(pr, oracles=o)
        bias = (ney.breakdown.beta / o.beta_star) / (opt.breakdown.beta / o.beta_star)
        var = opt.breakdown.alpha / ney.breakdown.alpha
        ok &= lo <= bias <= hi and var <= 1.55
        parts.append(f"{k} arm(s): bias-regret ratio {bias:.3f} in [{lo}, {hi}], variance ratio {var:.3f} <= 1.55")
    acceptance(6, "GE Neyman comparison at n=1000", ok, "; ".join(parts))
    assert ok


def test_criterion_07_site_selection(site_table, acceptance):
    one = solve(build_site_problem(site_table, 52, 1))
    two_pr = build_site_problem(site_table, 52, 2)
    two = solve(two_pr)
    one_ok = one.x_star == (0, 1, 0, 0)
    two_ok = two.x_star == (0, 1, 1, 0)
    g2 = float(two.gamma_star[1])
    secondary = float(two.n_star[2])
    ok = one_ok and two_ok and 0.85 <= g2 <= 1.0 and 5 <= secondary <= 10
    acceptance(
        7,
        "site selection at n1=52",
        ok,
        f"one area = Area 2: {one_ok}; two areas = Areas 2+3: {two_ok}; Area 2 weight {g2:.3f} in [0.85, 1]; Area 3 treated villages {secondary:.2f} in [5, 10]",
    )
    assert ok


def test_criterion_08_monte_carlo(acceptance):
    rng = np.random.default_rng(8)
    problems = [random_problem(rng) for _ in range(20)]
    start = time.perf_counter()
    worst_z, checked = 0.0, 0
    for i, pr in enumerate(problems):
        sol = solve(pr)
        s = sol.s_star
        zero = np.zeros(pr.p)
        B = math.sqrt(compute_alpha(pr, zero) / compute_beta(pr, zero))
        for b_vec, expected in ((zero, compute_alpha(pr, s)), (worst_case_bias(pr, s, B), compute_alpha(pr, s) + B * B * compute_beta(pr, s))):
            rep = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, b_vec, reps=100_000, seed=i)
            assert rep.theoretical_mse == pytest.approx(expected, rel=1e-12)
            worst_z = max(worst_z, abs(rep.z_score))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = worst_z < 3 and elapsed < 60
    acceptance(8, "Monte Carlo MSE matches closed form", ok, f"{checked} runs of 1e5 reps, worst |z| {worst_z:.2f} (limit 3), {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_09_moment_reduction(acceptance):
    emb = embedding_suite(_instances(9, 100), tol=1e-8)
    mom = moment_regret_suite(seed=99, count=50, rtol=0.01)
    ok = emb.passed and mom.passed and mom.checked == 100
    acceptance(
        9,
        "moment-model reduction",
        ok,
        f"embedding: {emb.checked} values on 100 instances, worst rel err {emb.worst:.1e} (tol 1e-8); radius grid on 50 two-candidate models: worst rel err {mom.worst:.1e} (tol 1e-2)",
    )
    assert ok


def test_criterion_10_interval_and_mse_argmin(acceptance):
    res = interval_equivalence_suite(seed=10, count=50)
    ok = res.passed and res.checked == 50
    mismatches = 0 if res.passed else "at least one"
    acceptance(10, "interval-length and MSE regret share argmin", ok, f"{res.checked} point-identified menus of 4 candidates, {mismatches} argmin mismatches (tie tol 1e-9)")
    assert ok


def test_criterion_11_bounded_bias(acceptance):
    zero, two_point = bounded_bias_suite(_instances(11, 50), np.random.default_rng(111), tol=1e-6)
    ok = zero.passed and two_point.passed and zero.checked == two_point.checked == 50
    acceptance(
        11,
        "known bias bound",
        ok,
        f"zero radius = variance-optimal design on {zero.checked} (worst rel err {zero.worst:.1e}); two-point regret on {two_point.checked}, worst rel err {two_point.worst:.1e} (tol 1e-6)",
    )
    assert ok
