"""Variance and bias indices, oracle benchmarks and adaptation regret.

With the Neyman allocation profiled out, a design enters the worst-case mean
squared error only through the effective shrinkage ``s = x * gamma``:

.. math::

    \\alpha(s) = \\frac{1}{n}\\Big(\\sum_j s_j |\\omega_j| v_j \\sqrt{c_j}\\Big)^2
        + (\\omega \\odot (1 - s))^\\top \\Sigma_{obs} (\\omega \\odot (1 - s)),

    \\beta(s) = \\Big(\\sum_j (1 - s_j) |\\omega_j|\\Big)^2 \\quad (\\ell_\\infty\\ \\text{ball}),

so that the worst-case MSE over a bias ball of radius ``B`` is
``alpha + B**2 * beta``. The adaptation regret of a design is
``max(alpha / alpha_star, beta / beta_star)`` where the starred values are the
smallest achievable over all feasible designs.

Both indices are convex quadratics in ``s`` (the l1-ball index is the square
of a max of affine functions), and every optimization in the package reduces to
minimizing a nonnegative combination ``a * alpha(s) + b * beta(s)`` over a box
``0 <= s <= x``; :func:`min_combo` is that primitive.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .boxqp import solve_box_qp
from .errors import EnumerationTooLarge, NoActiveArm, ProblemValidationError
from .model import (
    DEFAULT_ENUMERATION_CAP,
    DesignProblem,
    GammaPolicy,
    count_feasible,
    design_key,
    feasible_designs,
)

TIE_RTOL = 1e-9


class Binding(str, enum.Enum):
    VARIANCE = "variance"
    BIAS = "bias"
    BOTH = "both"


@dataclass(frozen=True)
class RegretBreakdown:
    """Diagnostic record of a regret evaluation.

    ``regret`` is ``max(alpha / alpha_star, beta / beta_star)`` with the
    conventions ``0/0 = 1`` and ``q/0 = inf`` for ``q > 0``.
    """

    alpha: float
    alpha_star: float
    beta: float
    beta_star: float
    regret: float
    binding: Binding

    @property
    def variance_ratio(self) -> float:
        return ratio(self.alpha, self.alpha_star)

    @property
    def bias_ratio(self) -> float:
        return ratio(self.beta, self.beta_star)


@dataclass(frozen=True)
class Oracles:
    """Oracle benchmarks with their minimizers.

    ``alpha_x``/``alpha_gamma`` attain ``alpha_star``; ``beta_x`` (with
    ``gamma = 1`` on its selected arms) attains ``beta_star``.
    """

    alpha_star: float
    alpha_x: tuple[int, ...]
    alpha_gamma: np.ndarray
    beta_star: float
    beta_x: tuple[int, ...]


def ratio(num: float, den: float) -> float:
    """``num / den`` with ``0/0 = 1`` and ``q/0 = inf``."""
    if den == 0.0:
        return 1.0 if num == 0.0 else math.inf
    return num / den


def binding_side(r_var: float, r_bias: float, rtol: float = TIE_RTOL) -> Binding:
    if r_var == r_bias or (
        math.isfinite(r_var) and math.isfinite(r_bias) and abs(r_var - r_bias) <= rtol * max(abs(r_var), abs(r_bias))
    ):
        return Binding.BOTH
    return Binding.VARIANCE if r_var > r_bias else Binding.BIAS


def effective_shrinkage(x: Sequence[int], gamma: Sequence[float]) -> np.ndarray:
    """``s = x * gamma`` after checking ``x`` binary and ``gamma`` in [0, 1]."""
    x = np.asarray(x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if x.shape != gamma.shape:
        raise ProblemValidationError(f"x and gamma shapes differ: {x.shape} vs {gamma.shape}")
    if np.any((x != 0) & (x != 1)):
        raise ProblemValidationError("x must be binary")
    if np.any(~np.isfinite(gamma)) or np.any(gamma < 0) or np.any(gamma > 1):
        raise ProblemValidationError("gamma must lie in [0, 1]")
    return x * gamma


def _check_s(problem: DesignProblem, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (problem.p,):
        raise ProblemValidationError(f"s must have length {problem.p}, got shape {s.shape}")
    if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise ProblemValidationError("effective shrinkage s must lie in [0, 1]")
    return s


def _arm_scale(problem: DesignProblem) -> np.ndarray:
    """``|omega_j| v_j sqrt(c_j)``, the per-arm weight of the experimental term."""
    return np.abs(problem.omega) * np.sqrt(problem.v2 * problem.costs)


def _bias_weights(problem: DesignProblem) -> np.ndarray:
    w = np.abs(problem.omega)
    if problem.norm.kind == "weighted":
        w = w * np.asarray(problem.norm.weights)
    return w


def compute_alpha(problem: DesignProblem, s) -> float:
    """Variance index at effective shrinkage ``s`` under the Neyman allocation."""
    s = _check_s(problem, s)
    exp_term = float(_arm_scale(problem) @ s) ** 2 / problem.budget
    r = problem.omega * (1.0 - s)
    return exp_term + float(r @ problem.sigma_obs @ r)


def compute_beta(problem: DesignProblem, s) -> float:
    """Squared worst-case bias per unit radius at effective shrinkage ``s``.

    Linf and weighted balls give the squared weighted l1 norm of
    ``omega * (1 - s)``; the l2 ball its squared l2 norm; the l1 ball its
    squared largest entry.
    """
    s = _check_s(problem, s)
    return _beta_unchecked(problem, s)


def _beta_unchecked(problem: DesignProblem, s: np.ndarray) -> float:
    kind = problem.norm.kind
    if kind in ("linf", "weighted"):
        return float(_bias_weights(problem) @ (1.0 - s)) ** 2
    r = np.abs(problem.omega) * (1.0 - s)
    if kind == "l2":
        return float(r @ r)
    return float(np.max(r)) ** 2


def neyman_allocation(problem: DesignProblem, s) -> np.ndarray:
    """Variance-minimizing sample sizes for effective shrinkage ``s``.

    ``n_j = n * (|omega_j| v_j s_j / sqrt(c_j)) / sum_k |omega_k| v_k s_k sqrt(c_k)``,
    which spends the budget exactly and leaves arms with ``s_j = 0`` empty.

    Raises
    ------
    NoActiveArm
        If every ``s_j`` is zero.
    """
    s = _check_s(problem, s)
    if not np.any(s > 0):
        raise NoActiveArm("Neyman allocation needs at least one arm with positive shrinkage")
    sd = np.abs(problem.omega) * np.sqrt(problem.v2) * s
    denom = float(np.sum(sd * np.sqrt(problem.costs)))
    return problem.budget * (sd / np.sqrt(problem.costs)) / denom


def allocation_variance(problem: DesignProblem, s, n) -> float:
    """Variance of the shrinkage estimator for an arbitrary allocation ``n``.

    ``sum_j omega_j**2 s_j**2 v_j**2 / n_j`` plus the observational part; arms
    with ``s_j = 0`` contribute nothing whatever their size, and an active arm
    with ``n_j = 0`` makes the variance infinite.
    """
    s = _check_s(problem, s)
    n = np.asarray(n, dtype=float)
    active = s > 0
    if np.any(n[active] <= 0):
        return math.inf
    om = problem.omega[active]
    exp_term = float(np.sum(om**2 * s[active] ** 2 * problem.v2[active] / n[active]))
    r = problem.omega * (1.0 - s)
    return exp_term + float(r @ problem.sigma_obs @ r)


class QuadraticForms:
    """Quadratic-form coefficients of ``alpha`` and ``beta`` in ``s``.

    Each index equals ``0.5 s'Qs + q's + c``. Built once per problem and reused
    by the solvers. For the l1 ball ``beta`` is not quadratic and the beta
    coefficients are ``None``.
    """

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        om = problem.omega
        sig = problem.sigma_obs
        a = _arm_scale(problem)
        self.arm_scale = a
        D = np.diag(om)
        self.Qa = 2.0 * (np.outer(a, a) / problem.budget + D @ sig @ D)
        self.qa = -2.0 * (D @ sig @ om)
        self.ca = float(om @ sig @ om)
        kind = problem.norm.kind
        self.kind = kind
        self.abs_omega = np.abs(om)
        if kind in ("linf", "weighted"):
            w = _bias_weights(problem)
            W = float(np.sum(w))
            self.Qb = 2.0 * np.outer(w, w)
            self.qb = -2.0 * W * w
            self.cb = W * W
        elif kind == "l2":
            w2 = om**2
            self.Qb = 2.0 * np.diag(w2)
            self.qb = -2.0 * w2
            self.cb = float(np.sum(w2))
        else:
            self.Qb = self.qb = self.cb = None

    def alpha(self, s: np.ndarray) -> float:
        # direct evaluation avoids cancellation in the expanded quadratic form
        p = self.problem
        r = p.omega * (1.0 - s)
        return float(self.arm_scale @ s) ** 2 / p.budget + float(r @ p.sigma_obs @ r)

    def beta(self, s: np.ndarray) -> float:
        return _beta_unchecked(self.problem, s)


def _support(x) -> np.ndarray:
    return np.flatnonzero(np.asarray(x) != 0)


def min_combo(problem: DesignProblem, x, a: float, b: float, *, forms: QuadraticForms | None = None, s0=None) -> np.ndarray:
    """Minimize ``a * alpha(s) + b * beta(s)`` over ``0 <= s <= x``.

    Parameters
    ----------
    x : binary vector
        Selected arms; unselected coordinates of ``s`` are pinned to zero.
    a, b : float
        Nonnegative weights, not both zero.
    s0 : vector, optional
        Warm start.

    Returns
    -------
    s : ndarray (p,)
    """
    forms = forms or QuadraticForms(problem)
    p = problem.p
    s = np.zeros(p)
    idx = _support(x)
    if idx.size == 0:
        return s
    start = None if s0 is None else np.asarray(s0, dtype=float)[idx]
    ix = np.ix_(idx, idx)
    if forms.kind != "l1" or b == 0.0:
        Q = a * forms.Qa[ix]
        q = a * forms.qa[idx]
        if b != 0.0:
            Q = Q + b * forms.Qb[ix]
            q = q + b * forms.qb[idx]
        if not np.any(Q) and not np.any(q):
            s[idx] = 1.0
            return s
        s[idx] = solve_box_qp(Q, q, np.zeros(idx.size), np.ones(idx.size), x0=start)
        return s
    return _min_combo_l1(forms, idx, a, b, start)


def _min_combo_l1(forms: QuadraticForms, idx: np.ndarray, a: float, b: float, start) -> np.ndarray:
    # beta = R**2 with R = max_j |omega_j| (1 - s_j); profile over R, since for
    # fixed R the constraint is the box s_j >= 1 - R / |omega_j|
    p = forms.problem.p
    w = forms.abs_omega
    rest = np.setdiff1d(np.arange(p), idx)
    r0 = float(np.max(w[rest])) if rest.size else 0.0
    wsel = w[idx]
    r_hi = max(r0, float(np.max(wsel)))
    ones = np.ones(idx.size)

    def inner(R):
        lo = np.clip(1.0 - R / wsel, 0.0, 1.0)
        if a == 0.0:
            return ones.copy()
        Q = a * forms.Qa[np.ix_(idx, idx)]
        q = a * forms.qa[idx]
        x0 = None if start is None else np.clip(start, lo, 1.0)
        return solve_box_qp(Q, q, lo, ones, x0=x0)

    def full(sub):
        s = np.zeros(p)
        s[idx] = sub
        return s

    def objective(R):
        s = full(inner(R))
        return a * forms.alpha(s) + b * max(R, forms.beta(s) ** 0.5) ** 2

    candidates = [r0]
    if r_hi > r0 and a > 0.0:
        res = minimize_scalar(objective, bounds=(r0, r_hi), method="bounded", options={"xatol": 1e-13 * r_hi})
        candidates += [float(res.x), r_hi]
    best = min(candidates, key=objective)
    return full(inner(best))


def maximal_designs(problem: DesignProblem, cap: int = DEFAULT_ENUMERATION_CAP) -> list[tuple[int, ...]]:
    """Feasible selections not strictly contained in another feasible one.

    Any function of ``s`` minimized over ``0 <= s <= x`` and over feasible
    ``x`` attains its minimum on one of these, since a superset only enlarges
    the box.
    """
    feas = problem.feasibility
    p = problem.p
    if feas.mode == "all":
        return [(1,) * p]
    if feas.mode == "at_most_k":
        if math.comb(p, feas.k) > cap:
            raise EnumerationTooLarge(f"{math.comb(p, feas.k)} maximal designs exceed the cap {cap}")
        out = []
        for comb in itertools.combinations(range(p), feas.k):
            x = [0] * p
            for j in comb:
                x[j] = 1
            out.append(tuple(x))
        return out
    designs = feas.designs
    arr = np.array(designs, dtype=bool)
    out = []
    for i, d in enumerate(arr):
        covers = np.all(arr >= d, axis=1) & np.any(arr > d, axis=1)
        if not covers.any():
            out.append(designs[i])
    return out


def _smallest_cover(problem: DesignProblem, s: np.ndarray) -> tuple[int, ...]:
    """Canonical-first feasible design whose selection contains ``supp(s)``."""
    supp = s > 0
    if problem.feasibility.mode != "explicit":
        return tuple(int(v) for v in supp)
    for d in problem.feasibility.designs:
        if np.all(np.asarray(d, dtype=bool) >= supp):
            return d
    raise AssertionError("no feasible design covers the support")  # pragma: no cover


def gamma_from_s(x, s) -> np.ndarray:
    """Shrinkage weights for a design: ``s`` on selected arms, 1 elsewhere."""
    x = np.asarray(x)
    return np.where(x != 0, s, 1.0)


def _pick(entries, rtol=1e-12):
    """Smallest value; ties within ``rtol`` go to the canonical-first design."""
    best = min(e[0] for e in entries)
    tied = [e for e in entries if e[0] <= best + rtol * abs(best)]
    return min(tied, key=lambda e: design_key(e[1]))


def oracle_alpha_star(problem: DesignProblem, *, forms: QuadraticForms | None = None):
    """Smallest achievable variance index and a design attaining it.

    Returns
    -------
    alpha_star : float
    x : tuple of int
        Canonical-first feasible design attaining ``alpha_star``.
    gamma : ndarray
        Shrinkage weights on ``x`` (1 on unselected arms).
    """
    forms = forms or QuadraticForms(problem)
    entries = []
    if problem.gamma_policy == GammaPolicy.EXPERIMENT_ONLY:
        for x in feasible_designs(problem):
            s = np.asarray(x, dtype=float)
            entries.append((forms.alpha(s), x, s))
    else:
        for x in maximal_designs(problem):
            s = min_combo(problem, x, 1.0, 0.0, forms=forms)
            entries.append((forms.alpha(s), _smallest_cover(problem, s), s))
    value, x, s = _pick(entries)
    return value, x, gamma_from_s(x, s)


def oracle_beta_star(problem: DesignProblem):
    """Smallest achievable bias index (``gamma = 1`` on selected arms).

    Returns
    -------
    beta_star : float
    x : tuple of int
        Canonical-first feasible design attaining it.
    """
    p = problem.p
    feas = problem.feasibility
    if count_feasible(problem) > DEFAULT_ENUMERATION_CAP and feas.mode == "at_most_k":
        # cover the k largest contributions to the bias index
        w = np.abs(problem.omega)
        if problem.norm.kind == "weighted":
            w = w * np.asarray(problem.norm.weights)
        order = sorted(range(p), key=lambda j: (-w[j], j))
        x = [0] * p
        for j in order[: feas.k]:
            x[j] = 1
        x = tuple(x)
        return _beta_unchecked(problem, np.asarray(x, dtype=float)), x
    entries = [(_beta_unchecked(problem, np.asarray(x, dtype=float)), x) for x in feasible_designs(problem)]
    value, x = _pick(entries)
    return value, x


def compute_oracles(problem: DesignProblem, *, forms: QuadraticForms | None = None) -> Oracles:
    a_star, a_x, a_gamma = oracle_alpha_star(problem, forms=forms)
    b_star, b_x = oracle_beta_star(problem)
    a_gamma.setflags(write=False)
    return Oracles(a_star, a_x, a_gamma, b_star, b_x)


def breakdown_from_s(problem: DesignProblem, s, alpha_star: float, beta_star: float) -> RegretBreakdown:
    """Regret breakdown of the design with effective shrinkage ``s``."""
    s = _check_s(problem, s)
    alpha = compute_alpha(problem, s)
    beta = _beta_unchecked(problem, s)
    r_var = ratio(alpha, alpha_star)
    r_bias = ratio(beta, beta_star)
    return RegretBreakdown(alpha, alpha_star, beta, beta_star, max(r_var, r_bias), binding_side(r_var, r_bias))


def regret(problem: DesignProblem, x, gamma, alpha_star: float, beta_star: float) -> RegretBreakdown:
    """Adaptation regret ``max(alpha/alpha_star, beta/beta_star)`` of ``(x, gamma)``."""
    return breakdown_from_s(problem, effective_shrinkage(x, gamma), alpha_star, beta_star)


class ComboOracle:
    """``min over feasible designs of a * alpha + b * beta``, with warm starts.

    Repeated calls along a path of weights (a bias-radius grid, say) reuse the
    previous minimizer of each design as the starting point.
    """

    def __init__(self, problem: DesignProblem, forms: QuadraticForms | None = None):
        self.problem = problem
        self.forms = forms or QuadraticForms(problem)
        self.fixed = problem.gamma_policy == GammaPolicy.EXPERIMENT_ONLY
        if self.fixed:
            self.designs = feasible_designs(problem)
            self._ab = [
                (self.forms.alpha(np.asarray(x, float)), self.forms.beta(np.asarray(x, float))) for x in self.designs
            ]
        else:
            self.designs = maximal_designs(problem)
        self._warm: dict[tuple[int, ...], np.ndarray] = {}

    def __call__(self, a: float, b: float) -> float:
        if self.fixed:
            return min(a * al + (b * be if b else 0.0) for al, be in self._ab)
        best = math.inf
        for x in self.designs:
            s = min_combo(self.problem, x, a, b, forms=self.forms, s0=self._warm.get(x))
            self._warm[x] = s
            best = min(best, a * self.forms.alpha(s) + (b * self.forms.beta(s) if b else 0.0))
        return best
