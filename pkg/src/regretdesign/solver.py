"""Regret-optimal design: arm selection, shrinkage and sample allocation.

For a fixed arm selection ``x`` the regret-optimal shrinkage solves

    min_s  max{ f(s), g(s) }   over  0 <= s <= x,

with ``f = alpha / alpha_star`` and ``g = beta / beta_star`` (or, for a known
bias bound, ``g = (alpha + B**2 beta) / min(alpha' + B**2 beta')``). Both
pieces are convex, so by minimax duality the optimum equals
``max_lambda min_s lambda f + (1 - lambda) g``. The dual function is concave
in ``lambda`` with slope ``f - g`` at the scalarized minimizer, so a bracketing
search on ``lambda`` converges, and each step costs a single box-constrained
QP. Every step also yields a certified lower bound, and interpolating between
the minimizers on either side of the root gives a feasible point whose two
ratios are equal; the search stops when the two bounds meet.

Arm selections are enumerated exhaustively (ties go to fewer arms, then to
the lowest arm indices), switching to best-first branch and bound when the
feasible set is large.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AllInfeasible, Infeasible, NonConvergence
from .model import DesignProblem, GammaPolicy, count_feasible, design_key, feasible_designs
from .regret_core import (
    TIE_RTOL,
    ComboOracle,
    Oracles,
    QuadraticForms,
    RegretBreakdown,
    binding_side,
    compute_oracles,
    gamma_from_s,
    min_combo,
    neyman_allocation,
    ratio,
)

BNB_THRESHOLD = 2**14
GAP_RTOL = 1e-10
MAX_STEPS = 200


@dataclass(frozen=True)
class DesignSolution:
    """A design with its regret breakdown.

    Attributes
    ----------
    x_star : tuple of int
        Selected arms.
    gamma_star : ndarray
        Shrinkage weights; 1 by convention on unselected arms.
    n_star : ndarray
        Neyman sample sizes at the chosen shrinkage (zero on unselected arms).
    t_star : float
        Regret factor. For :func:`solve_bounded` this is the bounded-bias
        regret and ``breakdown.binding`` refers to its two ratios.
    breakdown : RegretBreakdown
    bias_bound : float or None
        The known bias bound for :func:`solve_bounded` solutions.
    """

    x_star: tuple[int, ...]
    gamma_star: np.ndarray
    n_star: np.ndarray
    t_star: float
    breakdown: RegretBreakdown
    bias_bound: float | None = None

    @property
    def s_star(self) -> np.ndarray:
        return np.asarray(self.x_star, dtype=float) * self.gamma_star

    @property
    def selected(self) -> list[int]:
        return [j for j, v in enumerate(self.x_star) if v]


@dataclass(frozen=True)
class InnerResult:
    gamma: np.ndarray
    s: np.ndarray
    t: float
    lower_bound: float = field(default=math.nan)


class _Pair:
    """Two objectives ``f``, ``g`` that are nonnegative combinations of alpha and beta."""

    def __init__(self, forms: QuadraticForms, F, G):
        self.forms = forms
        self.F = F
        self.G = G

    def values(self, s):
        al = self.forms.alpha(s)
        be = self.forms.beta(s)
        return self.F[0] * al + self.F[1] * be, self.G[0] * al + self.G[1] * be


def _minimax(problem: DesignProblem, x, pair: _Pair) -> tuple[np.ndarray, float, float]:
    """Minimize ``max(f, g)`` over ``0 <= s <= x``; returns (s, t, lower bound)."""
    forms = pair.forms
    F, G = pair.F, pair.G

    def scalarized(lam, s0=None):
        a = lam * F[0] + (1 - lam) * G[0]
        b = lam * F[1] + (1 - lam) * G[1]
        s = min_combo(problem, x, a, b, forms=forms, s0=s0)
        f, g = pair.values(s)
        return s, f, g

    s1, f1, g1 = scalarized(1.0)
    if f1 >= g1:
        return s1, f1, f1
    s0, f0, g0 = scalarized(0.0, s1)
    if g0 >= f0:
        return s0, g0, g0

    # bracket: at lam_a the minimizer has f > g, at lam_b it has f < g
    lam_a, s_a, h_a = 0.0, s0, f0 - g0
    lam_b, s_b, h_b = 1.0, s1, f1 - g1
    lower = max(g0, f1)
    best_s, best_t = (s0, f0) if f0 < g1 else (s1, g1)
    side = 0
    for _ in range(MAX_STEPS):
        # Illinois-style false position on the dual slope, with bisection guard
        lam = (lam_a * h_b - lam_b * h_a) / (h_b - h_a)
        width = lam_b - lam_a
        if not (lam_a + 0.01 * width < lam < lam_b - 0.01 * width) or abs(side) >= 2:
            lam = 0.5 * (lam_a + lam_b)
            side = 0
        s, f, g = scalarized(lam, s_a if lam - lam_a < lam_b - lam else s_b)
        lower = max(lower, lam * f + (1 - lam) * g)
        if max(f, g) < best_t:
            best_s, best_t = s, max(f, g)
        h = f - g
        if h == 0.0:
            return s, max(f, g), lower
        if h > 0:
            lam_a, s_a, h_a = lam, s, h
            side = side + 1 if side > 0 else 1
            if side >= 2:
                h_b *= 0.5
        else:
            lam_b, s_b, h_b = lam, s, h
            side = side - 1 if side < 0 else -1
            if side <= -2:
                h_a *= 0.5
        # the point on [s_a, s_b] where the two ratios cross
        seg = _segment_cross(pair, s_a, s_b)
        if seg is not None and seg[1] < best_t:
            best_s, best_t = seg
        if best_t - lower <= GAP_RTOL * best_t:
            return best_s, best_t, lower
    if best_t - lower <= 1e-6 * best_t:
        return best_s, best_t, lower
    raise NonConvergence(f"inner minimax did not close its duality gap (upper {best_t}, lower {lower})")


def _segment_cross(pair: _Pair, s_a, s_b):
    def h(mu):
        f, g = pair.values(s_a + mu * (s_b - s_a))
        return f - g

    ha, hb = h(0.0), h(1.0)
    if not (ha > 0 > hb):
        return None
    mu = brentq(h, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    s = np.clip(s_a + mu * (s_b - s_a), 0.0, 1.0)
    f, g = pair.values(s)
    return s, max(f, g)


def _inner(problem: DesignProblem, x, F, G, forms: QuadraticForms) -> InnerResult:
    x = tuple(int(v) for v in x)
    if problem.gamma_policy == GammaPolicy.EXPERIMENT_ONLY:
        s = np.asarray(x, dtype=float)
        f, g = _Pair(forms, F, G).values(s)
        t = max(f, g)
        if math.isnan(t) or math.isinf(t):
            raise Infeasible(f"design {x} has infinite regret")
        return InnerResult(gamma_from_s(x, s), s, t, t)
    s, t, lower = _minimax(problem, x, _Pair(forms, F, G))
    return InnerResult(gamma_from_s(x, s), s, t, lower)


def _objective_pair(alpha_star: float, beta_star: float):
    return (1.0 / alpha_star, 0.0), (0.0, 1.0 / beta_star)


def _degenerate_inner(problem, x, alpha_star, beta_star, forms):
    """Handle a zero oracle value, where the matching ratio is 0/0 or infinite."""
    x = tuple(int(v) for v in x)
    if beta_star == 0.0:
        # only s = 1 everywhere gives zero bias, and it needs every arm selected
        if not all(x):
            raise Infeasible(f"design {x} leaves bias uncovered while the oracle bias is zero")
        s = np.ones(problem.p)
        t = ratio(forms.alpha(s), alpha_star)
    else:
        # alpha_star == 0: zero variance requires s = 0 and a null observational variance
        s = np.zeros(problem.p)
        if forms.alpha(s) != 0.0:
            raise Infeasible(f"design {x} cannot reach zero variance")
        t = ratio(forms.beta(s), beta_star)
    if math.isinf(t):
        raise Infeasible(f"design {x} has infinite regret")
    return InnerResult(gamma_from_s(x, s), s, t, t)


def inner_solve(problem: DesignProblem, x, alpha_star: float, beta_star: float, *, forms=None) -> InnerResult:
    """Regret-optimal shrinkage for a fixed arm selection.

    Minimizes ``max(alpha(s)/alpha_star, beta(s)/beta_star)`` over
    ``s = x * gamma`` with ``gamma`` in [0, 1]. The result carries a certified
    lower bound on the optimum; the returned ``t`` is within a relative
    ``1e-10`` of it.

    Raises
    ------
    Infeasible
        If every shrinkage gives infinite regret (for instance
        ``beta_star = 0`` but ``x`` leaves some coordinate uncovered).
    NonConvergence
        If the duality gap does not close within 200 steps.
    """
    forms = forms or QuadraticForms(problem)
    if alpha_star == 0.0 or beta_star == 0.0:
        if problem.gamma_policy == GammaPolicy.EXPERIMENT_ONLY:
            s = np.asarray(x, dtype=float)
            t = max(ratio(forms.alpha(s), alpha_star), ratio(forms.beta(s), beta_star))
            if math.isinf(t):
                raise Infeasible(f"design {tuple(x)} has infinite regret")
            return InnerResult(gamma_from_s(x, s), s, t, t)
        return _degenerate_inner(problem, x, alpha_star, beta_star, forms)
    F, G = _objective_pair(alpha_star, beta_star)
    return _inner(problem, x, F, G, forms)


def _finish(problem, x, s, t, alpha_star, beta_star, forms, *, bias_bound=None, pair=None) -> DesignSolution:
    x = tuple(int(v) for v in x)
    alpha = forms.alpha(s)
    beta = forms.beta(s)
    if pair is None:
        r1, r2 = ratio(alpha, alpha_star), ratio(beta, beta_star)
    else:
        r1, r2 = pair.values(s)
    bd = RegretBreakdown(alpha, alpha_star, beta, beta_star, t, binding_side(r1, r2))
    n = neyman_allocation(problem, s) if np.any(s > 0) else np.zeros(problem.p)
    gamma = gamma_from_s(x, s)
    for arr in (gamma, n):
        arr.setflags(write=False)
    return DesignSolution(x, gamma, n, t, bd, bias_bound)


def _select(results):
    """Smallest t; designs within the tie tolerance go to the canonical-first one."""
    finite = [r for r in results if math.isfinite(r[1])]
    if not finite:
        raise AllInfeasible("every feasible design has infinite regret")
    best = min(r[1] for r in finite)
    tied = [r for r in finite if r[1] <= best + TIE_RTOL * max(1.0, abs(best))]
    return min(tied, key=lambda r: design_key(r[0]))


def _enumerate(problem, evaluate):
    results = []
    for x in feasible_designs(problem):
        try:
            res = evaluate(x)
        except Infeasible:
            results.append((x, math.inf, None))
            continue
        results.append((x, res.t, res.s))
    return _select(results)


def _branch_and_bound(problem, evaluate):
    """Best-first search over partial selections for at-most-k / unrestricted sets.

    A node fixes the first ``depth`` arms; its bound is the optimum over the
    relaxation that selects every undecided arm, which can only do better than
    any completion because the shrinkage box only grows.
    """
    p = problem.p
    k = p if problem.feasibility.mode == "all" else problem.feasibility.k
    cache: dict[tuple[int, ...], float] = {}
    leaves = []

    def bound(x):
        if x not in cache:
            try:
                cache[x] = evaluate(x).t
            except Infeasible:
                cache[x] = math.inf
        return cache[x]

    def leaf(prefix):
        x = tuple(prefix) + (0,) * (p - len(prefix))
        try:
            res = evaluate(x)
            leaves.append((x, res.t, res.s))
        except Infeasible:
            leaves.append((x, math.inf, None))
        return leaves[-1][1]

    incumbent = math.inf
    heap = [(bound((1,) * p), ())]
    while heap:
        lb, prefix = heapq.heappop(heap)
        if lb > incumbent + TIE_RTOL * max(1.0, abs(incumbent)):
            break
        ones = sum(prefix)
        if ones == k or len(prefix) == p:
            incumbent = min(incumbent, leaf(prefix))
            continue
        for bit in (1, 0):
            child = prefix + (bit,)
            # the relaxation may exceed k arms; it is still a valid bound
            relax = child + (1,) * (p - len(child))
            heapq.heappush(heap, (bound(relax), child))
    return _select(leaves)


def _search(problem, evaluate, threshold):
    if problem.feasibility.mode != "explicit" and count_feasible(problem) > threshold:
        return _branch_and_bound(problem, evaluate)
    return _enumerate(problem, evaluate)


def solve(problem: DesignProblem, *, oracles: Oracles | None = None, bnb_threshold: int = BNB_THRESHOLD) -> DesignSolution:
    """Regret-optimal design.

    Enumerates feasible arm selections (best-first branch and bound above
    ``bnb_threshold`` of them), finds the regret-optimal shrinkage for each
    and returns the overall minimizer, with Neyman sample sizes.

    Raises
    ------
    AllInfeasible
        If every feasible selection has infinite regret.
    """
    forms = QuadraticForms(problem)
    oracles = oracles or compute_oracles(problem, forms=forms)
    a_star, b_star = oracles.alpha_star, oracles.beta_star

    def evaluate(x):
        return inner_solve(problem, x, a_star, b_star, forms=forms)

    x, t, s = _search(problem, evaluate, bnb_threshold)
    return _finish(problem, x, s, t, a_star, b_star, forms)


def solve_bounded(problem: DesignProblem, B_bar: float, *, oracles: Oracles | None = None, bnb_threshold: int = BNB_THRESHOLD) -> DesignSolution:
    """Regret-optimal design when the bias radius is known not to exceed ``B_bar``.

    Minimizes ``max{alpha/alpha_star, (alpha + B_bar**2 beta) / m}`` where
    ``m`` is the smallest worst-case MSE at radius ``B_bar`` over all feasible
    designs. At ``B_bar = 0`` this is the variance-optimal design.
    """
    B_bar = float(B_bar)
    if not (math.isfinite(B_bar) and B_bar >= 0):
        raise ValueError(f"B_bar must be finite and nonnegative, got {B_bar}")
    forms = QuadraticForms(problem)
    oracles = oracles or compute_oracles(problem, forms=forms)
    a_star = oracles.alpha_star
    b2 = B_bar * B_bar
    m = ComboOracle(problem, forms)(1.0, b2)
    if a_star == 0.0 or m == 0.0:
        raise Infeasible("bounded-bias regret needs a positive variance benchmark")
    F = (1.0 / a_star, 0.0)
    G = (1.0 / m, b2 / m)

    def evaluate(x):
        return _inner(problem, x, F, G, forms)

    x, t, s = _search(problem, evaluate, bnb_threshold)
    return _finish(problem, x, s, t, a_star, oracles.beta_star, forms, bias_bound=B_bar, pair=_Pair(forms, F, G))


def neyman_design(problem: DesignProblem, *, oracles: Oracles | None = None) -> DesignSolution:
    """The variance-optimal design with its full regret breakdown."""
    forms = QuadraticForms(problem)
    oracles = oracles or compute_oracles(problem, forms=forms)
    x = oracles.alpha_x
    s = np.asarray(x, dtype=float) * oracles.alpha_gamma
    r = max(ratio(forms.alpha(s), oracles.alpha_star), ratio(forms.beta(s), oracles.beta_star))
    return _finish(problem, x, s, r, oracles.alpha_star, oracles.beta_star, forms)
