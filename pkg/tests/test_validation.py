import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regretdesign.apps import build_ge_problem
from regretdesign.errors import GridTooLarge, ProblemValidationError
from regretdesign.model import FeasibilitySet, NormSpec, make_problem
from regretdesign.regret_core import compute_alpha, compute_beta, compute_oracles, effective_shrinkage
from regretdesign.solver import solve
from regretdesign.validation import (
    Regime,
    TwoParamInstance,
    classify_regime,
    default_B_grid,
    gamma_star_2param,
    grid_oracle,
    monte_carlo_mse,
    philox_normals,
    sup_B_scan,
    two_param_oracles,
    worst_case_bias,
)

from .conftest import positive, problems


def _random_problem(seed, p, k=None, **kw):
    rng = np.random.default_rng(seed)
    return make_problem(
        np.exp(rng.uniform(-2.3, 2.3, p)),
        np.exp(rng.uniform(-2.3, 2.3, p)),
        np.exp(rng.uniform(-2.3, 2.3, p)),
        1.0,
        feasibility=FeasibilitySet.at_most_k(k or int(rng.integers(1, p + 1))),
        **kw,
    )


# --------------------------------------------------------------- grid oracle


@pytest.mark.parametrize("seed", range(5))
def test_grid_oracle_close_to_solver_for_two_parameters(seed):
    pr = _random_problem(seed, 2)
    o = compute_oracles(pr)
    g = grid_oracle(pr, 1001, oracles=o)
    t = solve(pr, oracles=o).t_star
    assert t <= g.t * (1 + 1e-12)
    assert g.t - t <= 1e-3 * t


def test_grid_oracle_single_design():
    pr = make_problem([1.0, 2.0], [1.0, 1.0], [0.5, 0.5], 1.0, feasibility=FeasibilitySet.explicit([(0, 1)]))
    g = grid_oracle(pr, 2001)
    assert g.x == (0, 1)
    assert g.t == pytest.approx(solve(pr).t_star, rel=1e-3)


def test_grid_oracle_agrees_on_ge_arm_choice(ge_cal):
    pr = build_ge_problem(ge_cal, 1000, 2)
    assert grid_oracle(pr, 101).x == solve(pr).x_star


def test_grid_oracle_limits():
    with pytest.raises(GridTooLarge):
        grid_oracle(_random_problem(0, 5), 10)
    with pytest.raises(GridTooLarge):
        grid_oracle(_random_problem(0, 4, k=4), 200)


# ------------------------------------------------------------------- B scan


def test_scan_endpoints():
    pr = _random_problem(3, 3)
    o = compute_oracles(pr)
    sol = solve(pr, oracles=o)
    s = sol.s_star
    at_zero = sup_B_scan(pr, sol.x_star, sol.gamma_star, [0.0])
    assert at_zero.sup == pytest.approx(compute_alpha(pr, s) / o.alpha_star, rel=1e-12)
    scale = math.sqrt(compute_alpha(pr, np.zeros(3)) / compute_beta(pr, np.zeros(3)))
    tail = sup_B_scan(pr, sol.x_star, sol.gamma_star, [1e7 * scale])
    assert tail.curve[-1] == pytest.approx(compute_beta(pr, s) / o.beta_star, rel=1e-6)


def test_scan_rejects_bad_grid():
    pr = _random_problem(3, 2)
    with pytest.raises(ProblemValidationError):
        sup_B_scan(pr, (1, 0), np.ones(2), [1.0, 0.5])
    with pytest.raises(ProblemValidationError):
        sup_B_scan(pr, (1, 0), np.ones(2), [])


@given(problems(max_p=3, norms=("linf", "l2", "weighted", "l1")))
def test_sup_over_radii_is_regret(pr):
    sol = solve(pr)
    if not math.isfinite(sol.t_star):
        return
    scan = sup_B_scan(pr, sol.x_star, sol.gamma_star, default_B_grid(pr))
    assert scan.sup <= sol.t_star * (1 + 1e-9)
    assert scan.sup == pytest.approx(sol.t_star, rel=0.01)
    assert scan.curve.max() <= max(scan.curve[0], scan.curve[-1]) + 1e-9


def test_default_grid_shape():
    pr = _random_problem(0, 2)
    g = default_B_grid(pr)
    assert g[0] == 0.0 and g.size == 201 and np.all(np.diff(g) > 0)


# ------------------------------------------------------------ two parameters


def test_worthless_observational_estimate_gives_full_weight():
    inst = TwoParamInstance((1.0, 1.0), (1.0, 1e6), (1.0, 1.0))
    a, b = two_param_oracles(inst)
    assert gamma_star_2param(inst, a, b) == pytest.approx(1.0, abs=1e-5)


def test_interior_root_equalizes_ratios():
    inst = TwoParamInstance((0.9, 1.0), (1.0, 1.0), (1.0, 1.0))
    a, b = two_param_oracles(inst)
    assert classify_regime(inst, a, b) is Regime.INTERIOR
    g = gamma_star_2param(inst, a, b)
    assert inst.alpha(g) / a == pytest.approx(inst.beta(g) / b, rel=1e-8)


def test_small_omega2_is_bias_dominant():
    inst = TwoParamInstance((1.0, 0.1), (1.0, 1.0), (1.0, 0.25))
    a, b = two_param_oracles(inst)
    assert classify_regime(inst, a, b) is Regime.BIAS_BOUNDARY
    assert gamma_star_2param(inst, a, b) == 1.0


def test_regime_sweep_over_omega2():
    regimes = []
    for w2 in np.linspace(0.1, 2.0, 30):
        inst = TwoParamInstance((1.0, w2), (1.0, 1.0), (1.0, 0.25))
        regimes.append(classify_regime(inst, *two_param_oracles(inst)))
    assert regimes[0] is Regime.BIAS_BOUNDARY
    assert Regime.INTERIOR in regimes
    first_interior = regimes.index(Regime.INTERIOR)
    assert all(r is Regime.BIAS_BOUNDARY for r in regimes[:first_interior])


@given(positive, positive, positive, positive, positive, positive, st.sampled_from([1, 2]))
def test_gamma_star_within_variance_optimum_and_one(w1, w2, s1, s2, v1, v2, arm):
    inst = TwoParamInstance((w1, w2), (s1, s2), (v1, v2), arm)
    a, b = two_param_oracles(inst)
    g = gamma_star_2param(inst, a, b)
    assert inst.gamma_var - 1e-12 <= g <= 1.0
    regime = classify_regime(inst, a, b)
    if regime is Regime.BIAS_BOUNDARY:
        assert g == 1.0
    if regime is Regime.VARIANCE_BOUNDARY:
        assert g == inst.gamma_var


def test_two_param_instance_matches_problem():
    inst = TwoParamInstance((0.7, -1.3), (1.5, 0.4), (0.8, 2.0), arm=1)
    pr = inst.to_problem()
    for g in (0.0, 0.3, 1.0):
        s = np.array([g, 0.0])
        assert inst.alpha(g) == pytest.approx(compute_alpha(pr, s), rel=1e-12)
        assert inst.beta(g) == pytest.approx(compute_beta(pr, s), rel=1e-12)


# -------------------------------------------------------------- Monte Carlo


def test_philox_normals_are_standard_and_keyed():
    z = philox_normals(7, 0, 200_001)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02
    np.testing.assert_array_equal(philox_normals(7, 0, 100), philox_normals(7, 0, 100))
    assert not np.array_equal(philox_normals(7, 1, 100), philox_normals(7, 0, 100))
    assert not np.array_equal(philox_normals(8, 0, 100), philox_normals(7, 0, 100))


@pytest.mark.parametrize("norm", [NormSpec.linf(), NormSpec.l2(), NormSpec.l1(), NormSpec.weighted([1.0, 2.0, 0.5])])
def test_worst_case_bias_attains_bound(norm):
    pr = make_problem([1.0, -2.0, 0.5], [1.0, 1.0, 1.0], 1.0, 1.0, norm=norm)
    s = np.array([0.3, 0.6, 0.0])
    b = worst_case_bias(pr, s, 2.0)
    assert float(pr.omega * (1 - s) @ b) ** 2 == pytest.approx(4.0 * compute_beta(pr, s), rel=1e-12)


def test_mc_matches_closed_form_without_and_with_bias():
    pr = _random_problem(11, 3, k=2)
    sol = solve(pr)
    for B in (0.0, 1.5):
        rep = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, worst_case_bias(pr, sol.s_star, B), reps=100_000, seed=4)
        expected = compute_alpha(pr, sol.s_star) + B * B * compute_beta(pr, sol.s_star)
        assert rep.theoretical_mse == pytest.approx(expected, rel=1e-12)
        assert abs(rep.z_score) < 3
        assert abs(rep.mean_error - rep.theoretical_bias) < 3 * rep.mean_error_se


def test_full_coverage_is_unbiased():
    pr = make_problem([1.0, -2.0], [1.0, 1.0], [1.0, 1.0], 1.0, theta_obs=[0.3, -0.1])
    rep = monte_carlo_mse(pr, (1, 1), np.ones(2), np.array([5.0, -3.0]), reps=50_000, seed=1)
    assert rep.theoretical_bias == 0.0
    assert abs(rep.mean_error) < 3 * rep.mean_error_se


def test_mc_independent_of_worker_count():
    pr = _random_problem(5, 3, k=2)
    sol = solve(pr)
    b = worst_case_bias(pr, sol.s_star, 1.0)
    one = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, b, reps=40_000, seed=9, workers=1)
    four = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, b, reps=40_000, seed=9, workers=4)
    assert one == four


def test_mc_location_invariance():
    pr = _random_problem(5, 2, k=1)
    sol = solve(pr)
    b = worst_case_bias(pr, sol.s_star, 1.0)
    base = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, b, reps=20_000, seed=2)
    shifted = monte_carlo_mse(pr, sol.x_star, sol.gamma_star, b, reps=20_000, seed=2, theta=np.array([3.0, -7.0]))
    assert shifted.empirical_mse == pytest.approx(base.empirical_mse, rel=1e-9)
    assert shifted.mean_error == pytest.approx(base.mean_error, rel=1e-6, abs=1e-12)


def test_mc_input_checks():
    pr = _random_problem(5, 2, k=1)
    with pytest.raises(ProblemValidationError):
        monte_carlo_mse(pr, (1, 0), np.ones(2), np.zeros(2), reps=10)
    with pytest.raises(ProblemValidationError):
        monte_carlo_mse(pr, (1, 0), np.ones(2), np.zeros(3))


def test_closed_form_bias_identity():
    pr = make_problem([1.0, -2.0, 0.5], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], 1.0, feasibility=FeasibilitySet.at_most_k(2))
    x, g = (1, 1, 0), np.array([0.6, 0.9, 1.0])
    b = np.array([0.5, -1.0, 2.0])
    s = effective_shrinkage(x, g)
    rep = monte_carlo_mse(pr, x, g, b, reps=100_000, seed=3)
    expected = 0.5 * 2.0 + 1.0 * 0.4 * 0.5 + (-2.0) * 0.1 * (-1.0)
    assert rep.theoretical_bias == pytest.approx(expected, rel=1e-12)
    assert float(np.sum(pr.omega * (1 - s) * b)) == pytest.approx(expected)
    assert abs(rep.mean_error - expected) < 3 * rep.mean_error_se
