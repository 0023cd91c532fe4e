import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regretdesign.ci_regret import (
    Envelope,
    bias_index_C,
    ci_indices,
    ci_loss,
    ci_regret,
    manski_envelope,
    variance_index_A,
    worst_case_interval,
)
from regretdesign.errors import DegenerateAssignment, ProblemValidationError
from regretdesign.gmm import Allocation, Candidate, alpha_gmm, beta_gmm, gamma_matrix, make_moment_model, regret_gmm
from regretdesign.model import NormSpec
from regretdesign.suites import random_moment_model

Z95 = 1.959963984540054


def _manski_model(W_list, sigma=None):
    """Four parameters, one observational and one experimental moment each."""
    lam = -np.vstack([np.eye(4), np.eye(4)])
    sigma = np.eye(8) if sigma is None else sigma
    cands = [Candidate(np.diag(w), sigma, f"c{i}") for i, w in enumerate(W_list)]
    return make_moment_model(lam, np.eye(4), tuple(range(4, 8)), cands, NormSpec.linf())


# ----------------------------------------------------------------- envelope


def test_manski_gradients():
    env = manski_envelope(0.5)
    np.testing.assert_allclose(env.omega_lower, [2, 0, -2, -2])
    np.testing.assert_allclose(env.omega_upper, [2, 2, -2, 0])
    env = manski_envelope(0.25)
    np.testing.assert_allclose(env.omega_lower, [4, 0, -4 / 3, -4 / 3])
    np.testing.assert_allclose(env.width_gradient, [0, 4, 0, 4 / 3])
    assert not env.is_point_identified


@given(st.floats(0.01, 0.99))
def test_manski_width_gradient(pi1):
    env = manski_envelope(pi1)
    np.testing.assert_allclose(env.width_gradient, [0, 1 / pi1, 0, 1 / (1 - pi1)], rtol=1e-14)


@pytest.mark.parametrize("pi1", [0.0, 1.0, -0.1, 1.5])
def test_degenerate_assignment(pi1):
    with pytest.raises(DegenerateAssignment):
        manski_envelope(pi1)


def test_envelope_validation():
    with pytest.raises(ProblemValidationError):
        Envelope([1.0], [1.0, 2.0])
    with pytest.raises(ProblemValidationError):
        Envelope([0.0], [0.0])
    with pytest.raises(ProblemValidationError):
        Envelope([1.0], [1.0], eta=1.0)


def test_critical_value():
    assert Envelope([1.0], [1.0]).z == pytest.approx(Z95, rel=1e-12)
    assert Envelope([1.0], [1.0], eta=0.1).z == pytest.approx(1.6448536269514722, rel=1e-12)


# ------------------------------------------------------------------ indices


def test_point_identified_indices():
    rng = np.random.default_rng(0)
    lam = rng.normal(size=(4, 2))
    G = gamma_matrix(lam, np.diag(rng.uniform(0.5, 2.0, 4)))
    S = rng.normal(size=(4, 4))
    S = S @ S.T
    w = np.array([1.0, -0.5])
    env = Envelope(w, w)
    norm = NormSpec.linf()
    assert variance_index_A(env, G, S) == pytest.approx(2 * Z95 * math.sqrt(alpha_gmm(w[None], G, S)), rel=1e-12)
    assert bias_index_C(env, G, (2, 3), norm) == pytest.approx(2 * math.sqrt(beta_gmm(w[None], G, (2, 3), norm)), rel=1e-12)
    assert variance_index_A(env, G, 4 * S) == pytest.approx(2 * variance_index_A(env, G, S), rel=1e-12)
    assert bias_index_C(env, G, (0, 1, 2, 3), norm) == 0.0


def test_manski_bias_index_by_hand():
    env = manski_envelope(0.5)
    # equal weight on observational and experimental moments for every parameter
    G = gamma_matrix(-np.vstack([np.eye(4), np.eye(4)]), np.eye(8))
    np.testing.assert_allclose(G, 0.5 * np.hstack([np.eye(4), np.eye(4)]))
    # under the sup norm the dual of a single row is its l1 norm over biased columns
    expected = 0.5 * (np.abs(env.omega_upper).sum() + np.abs(env.omega_lower).sum() + np.abs(env.width_gradient).sum())
    assert bias_index_C(env, G, tuple(range(4)), NormSpec.linf()) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.5 * (6 + 6 + 4))


# ---------------------------------------------------------------- intervals


def _interval_inputs(seed=1):
    rng = np.random.default_rng(seed)
    env = manski_envelope(0.4)
    model = _manski_model([rng.uniform(0.2, 1.0, 8)])
    G = gamma_matrix(model.lam, model.candidates[0].W)
    theta = rng.normal(size=4)
    return env, G, model, theta


def test_zero_radius_is_standard_interval():
    env, G, model, theta = _interval_inputs()
    S = model.candidates[0].sigma
    ci = worst_case_interval(env, G, S, model.experimental_idx, model.norm, theta, 0.0)
    est_lo = float(env.omega_lower @ theta)
    assert ci.lower == pytest.approx(est_lo - Z95 * math.sqrt(alpha_gmm(env.omega_lower[None], G, S)))


def test_padding_is_linear_in_radius():
    env, G, model, theta = _interval_inputs()
    args = (env, G, model.candidates[0].sigma, model.experimental_idx, model.norm, theta)
    c0, c1, c2 = (worst_case_interval(*args, B) for B in (0.0, 1.0, 2.0))
    assert c2.upper - c0.upper == pytest.approx(2 * (c1.upper - c0.upper), rel=1e-12)
    assert c0.lower - c2.lower == pytest.approx(2 * (c0.lower - c1.lower), rel=1e-12)
    assert c2.lower <= c1.lower <= c0.lower <= c0.upper <= c1.upper <= c2.upper


def test_interval_rejects_bad_radius():
    env, G, model, theta = _interval_inputs()
    with pytest.raises(ProblemValidationError):
        worst_case_interval(env, G, model.candidates[0].sigma, model.experimental_idx, model.norm, theta, -1.0)


def test_loss_is_affine():
    assert ci_loss(2.0, 3.0, 0.5) == 3.5


# ------------------------------------------------------------------- regret


def _menu(seed, n=3):
    rng = np.random.default_rng(seed)
    return _manski_model([rng.uniform(0.0, 1.0, 8) * (rng.uniform(size=8) > 0.2) + np.r_[np.full(4, 0.05), np.zeros(4)] for _ in range(n)])


@pytest.mark.parametrize("seed", range(5))
def test_regret_at_least_one_and_attained(seed):
    env = manski_envelope(0.3 + 0.1 * seed)
    model = _menu(seed)
    regrets = [ci_regret(env, model, i).regret for i in range(3)]
    assert min(regrets) >= 1.0
    vals = [ci_indices(env, model, i) for i in range(3)]
    a_star, c_star = min(v[0] for v in vals), min(v[1] for v in vals)
    B = np.concatenate([[0.0], np.logspace(-4, 4, 400) * a_star / c_star])
    for i, (A, C) in enumerate(vals):
        curve = (A + B * C) / (a_star + B * c_star)
        assert curve.max() == pytest.approx(regrets[i], rel=0.01)
        assert curve.max() <= regrets[i] * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_point_identified_regret_is_root_of_mse_regret(seed):
    model = random_moment_model(np.random.default_rng(seed), 3)
    w = model.omega_mat[0]
    env = Envelope(w, w)
    ci = [ci_regret(env, model, i).regret for i in range(3)]
    mse = [regret_gmm(model, i).regret for i in range(3)]
    np.testing.assert_allclose(np.square(ci), mse, rtol=1e-10)
    best_ci = {i for i in range(3) if ci[i] <= min(ci) * (1 + 1e-9)}
    best_mse = {i for i in range(3) if mse[i] <= min(mse) * (1 + 1e-9)}
    assert best_ci == best_mse


def test_allocation_candidates_rejected():
    lam = -np.ones((2, 1))
    cand = Candidate(np.eye(2), np.eye(2), "alloc", Allocation((1.0,), (1.0,), 1.0))
    model = make_moment_model(lam, [[1.0]], (1,), [cand])
    with pytest.raises(ProblemValidationError):
        ci_regret(Envelope([1.0], [1.0]), model, 0)


def test_envelope_length_checked():
    with pytest.raises(ProblemValidationError):
        ci_regret(Envelope([1.0, 2.0], [1.0, 2.0]), _menu(0), 0)
