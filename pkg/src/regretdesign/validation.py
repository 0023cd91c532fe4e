"""Independent checks of the solver.

* :func:`grid_oracle` brute-forces the shrinkage weights on a uniform grid.
* :func:`sup_B_scan` evaluates the worst-case MSE ratio against the oracle
  that knows the bias radius, over a grid of radii; its supremum is the
  adaptation regret.
* :func:`gamma_star_2param` and :func:`classify_regime` give the closed-form
  answer for two parameters with one experimental arm.
* :func:`monte_carlo_mse` simulates the estimator and compares its empirical
  MSE with the closed form.

The Monte Carlo engine uses the Philox4x64 counter-based generator with
Box-Muller normals so that draws depend only on ``(seed, block)`` and are
reproducible bit for bit regardless of how blocks are spread over threads.
"""

from __future__ import annotations

import enum
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import GridTooLarge, ProblemValidationError
from .model import DesignProblem, FeasibilitySet, feasible_designs, make_problem
from .regret_core import (
    ComboOracle,
    compute_alpha,
    compute_beta,
    compute_oracles,
    effective_shrinkage,
    gamma_from_s,
    neyman_allocation,
    ratio,
)

GRID_POINT_CAP = 2**25
MC_BLOCK = 2**14


# ---------------------------------------------------------------- grid oracle


@dataclass(frozen=True)
class GridResult:
    t: float
    x: tuple[int, ...]
    gamma: np.ndarray


def _alpha_rows(problem: DesignProblem, S: np.ndarray) -> np.ndarray:
    a = np.abs(problem.omega) * np.sqrt(problem.v2 * problem.costs)
    R = problem.omega * (1.0 - S)
    return (S @ a) ** 2 / problem.budget + np.einsum("ij,jk,ik->i", R, problem.sigma_obs, R)


def _beta_rows(problem: DesignProblem, S: np.ndarray) -> np.ndarray:
    kind = problem.norm.kind
    R = np.abs(problem.omega) * (1.0 - S)
    if kind == "linf":
        return R.sum(axis=1) ** 2
    if kind == "weighted":
        return (R @ np.asarray(problem.norm.weights)) ** 2
    if kind == "l2":
        return (R**2).sum(axis=1)
    return R.max(axis=1) ** 2


def grid_oracle(problem: DesignProblem, resolution: int = 200, *, oracles=None) -> GridResult:
    """Best regret over feasible designs and a uniform shrinkage grid.

    Each selected arm's weight ranges over ``linspace(0, 1, resolution)``
    (only ``gamma = 1`` under the experiment-only policy).

    Raises
    ------
    GridTooLarge
        If ``p > 4`` or the total number of grid points exceeds ``2**25``.
    """
    if problem.p > 4:
        raise GridTooLarge(f"grid oracle supports p <= 4, got {problem.p}")
    if resolution < 2:
        raise ProblemValidationError("resolution must be at least 2")
    oracles = oracles or compute_oracles(problem)
    fixed = problem.gamma_policy.value == "experiment_only"
    designs = feasible_designs(problem)
    levels = np.array([1.0]) if fixed else np.linspace(0.0, 1.0, resolution)
    total = sum(len(levels) ** sum(x) for x in designs)
    if total > GRID_POINT_CAP:
        raise GridTooLarge(f"{total} grid points exceed the cap {GRID_POINT_CAP}")
    best = (math.inf, None, None)
    for x in designs:
        idx = [j for j, v in enumerate(x) if v]
        grid = np.array(list(itertools.product(levels, repeat=len(idx)))) if idx else np.zeros((1, 0))
        S = np.zeros((grid.shape[0], problem.p))
        S[:, idx] = grid
        al = _alpha_rows(problem, S)
        be = _beta_rows(problem, S)
        with np.errstate(divide="ignore", invalid="ignore"):
            rv = _ratio_rows(al, oracles.alpha_star)
            rb = _ratio_rows(be, oracles.beta_star)
        t = np.maximum(rv, rb)
        i = int(np.argmin(t))
        if t[i] < best[0]:
            best = (float(t[i]), x, gamma_from_s(x, S[i]))
    return GridResult(*best)


def _ratio_rows(num: np.ndarray, den: float) -> np.ndarray:
    if den == 0.0:
        return np.where(num == 0.0, 1.0, np.inf)
    return num / den


# ------------------------------------------------------------------ B scan


@dataclass(frozen=True)
class ScanResult:
    B_grid: np.ndarray
    curve: np.ndarray
    sup: float
    argmax_B: float


def default_B_grid(problem: DesignProblem, points: int = 200, lo: float = -3.0, hi: float = 3.0) -> np.ndarray:
    """``{0}`` plus ``points`` log-spaced radii over ``[10**lo, 10**hi] * scale``.

    ``scale = sqrt(alpha(0) / beta(0))`` is the radius at which bias and
    variance of the purely observational estimate are equal.
    """
    zero = np.zeros(problem.p)
    scale = math.sqrt(compute_alpha(problem, zero) / compute_beta(problem, zero))
    return np.concatenate([[0.0], np.logspace(lo, hi, points) * scale])


def sup_B_scan(problem: DesignProblem, x, gamma, B_grid, *, combo: ComboOracle | None = None) -> ScanResult:
    """Worst-case MSE of ``(x, gamma)`` relative to the radius-aware oracle.

    For each ``B`` computes ``(alpha + B**2 beta) / min over designs of
    (alpha' + B**2 beta')``; the denominator is minimized per design by a
    convex solve, warm-started along the grid.
    """
    B_grid = np.asarray(B_grid, dtype=float)
    if B_grid.ndim != 1 or B_grid.size == 0 or np.any(np.diff(B_grid) < 0) or B_grid[0] < 0:
        raise ProblemValidationError("B_grid must be a nonempty ascending list of nonnegative radii")
    s = effective_shrinkage(x, gamma)
    alpha = compute_alpha(problem, s)
    beta = compute_beta(problem, s)
    combo = combo or ComboOracle(problem)
    curve = np.empty(B_grid.size)
    for i, B in enumerate(B_grid):
        b2 = B * B
        curve[i] = ratio(alpha + b2 * beta if b2 else alpha, combo(1.0, b2))
    i = int(np.argmax(curve))
    return ScanResult(B_grid, curve, float(curve[i]), float(B_grid[i]))


# ------------------------------------------------------- two-parameter model


class Regime(str, enum.Enum):
    INTERIOR = "interior"
    VARIANCE_BOUNDARY = "variance_boundary"
    BIAS_BOUNDARY = "bias_boundary"


@dataclass(frozen=True)
class TwoParamInstance:
    """Two parameters, independent estimates, one experimental arm ``arm`` (1 or 2).

    ``v2`` are the experimental variances at the full budget.
    """

    omega: tuple[float, float]
    sigma2: tuple[float, float]
    v2: tuple[float, float]
    arm: int = 2

    def __post_init__(self):
        if self.arm not in (1, 2):
            raise ProblemValidationError("arm must be 1 or 2")
        if any(w == 0 for w in self.omega):
            raise ProblemValidationError("omega entries must be nonzero")
        if any(v <= 0 for v in self.sigma2 + self.v2):
            raise ProblemValidationError("variances must be positive")

    @property
    def gamma_var(self) -> float:
        j = self.arm - 1
        return self.sigma2[j] / (self.sigma2[j] + self.v2[j])

    def to_problem(self) -> DesignProblem:
        """The equivalent design problem (unit budget and cost, at most one arm)."""
        return make_problem(self.omega, list(self.sigma2), list(self.v2), 1.0, feasibility=FeasibilitySet.at_most_k(1))

    def alpha(self, gamma: float) -> float:
        j, o = self.arm - 1, 2 - self.arm
        w = self.omega
        return w[o] ** 2 * self.sigma2[o] + w[j] ** 2 * (gamma**2 * self.v2[j] + (1 - gamma) ** 2 * self.sigma2[j])

    def beta(self, gamma: float) -> float:
        j, o = self.arm - 1, 2 - self.arm
        return (abs(self.omega[o]) + (1 - gamma) * abs(self.omega[j])) ** 2


def two_param_oracles(inst: TwoParamInstance) -> tuple[float, float]:
    """Closed-form ``(alpha_star, beta_star)`` when either arm may be run."""
    w, s2, v2 = inst.omega, inst.sigma2, inst.v2
    alpha_star = min(
        w[1 - k] ** 2 * s2[1 - k] + w[k] ** 2 * s2[k] * v2[k] / (s2[k] + v2[k]) for k in (0, 1)
    )
    beta_star = min(w[0] ** 2, w[1] ** 2)
    return alpha_star, beta_star


def _ratios(inst, gamma, alpha_star, beta_star):
    return inst.alpha(gamma) / alpha_star, inst.beta(gamma) / beta_star


def classify_regime(inst: TwoParamInstance, alpha_star: float, beta_star: float) -> Regime:
    """Which constraint binds on ``[gamma_var, 1]``, where variance regret rises and bias regret falls."""
    f0, g0 = _ratios(inst, inst.gamma_var, alpha_star, beta_star)
    if f0 >= g0:
        return Regime.VARIANCE_BOUNDARY
    f1, g1 = _ratios(inst, 1.0, alpha_star, beta_star)
    if f1 <= g1:
        return Regime.BIAS_BOUNDARY
    return Regime.INTERIOR


def gamma_star_2param(inst: TwoParamInstance, alpha_star: float, beta_star: float) -> float:
    """Regret-optimal shrinkage on the experimental arm of a two-parameter instance.

    Equal to 1 when bias regret dominates on the whole interval
    ``[gamma_var, 1]``, to ``gamma_var = sigma_j**2 / (sigma_j**2 + v_j**2)``
    when variance regret does, and otherwise to the unique point where the
    two ratios cross.
    """
    regime = classify_regime(inst, alpha_star, beta_star)
    if regime is Regime.VARIANCE_BOUNDARY:
        return inst.gamma_var
    if regime is Regime.BIAS_BOUNDARY:
        return 1.0

    def h(g):
        f, b = _ratios(inst, g, alpha_star, beta_star)
        return f - b

    return brentq(h, inst.gamma_var, 1.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)


# -------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class McReport:
    """Simulated against closed-form MSE of a design under a fixed bias vector.

    ``mean_error`` and ``mean_error_se`` estimate the bias of the target
    estimate, to be compared with ``theoretical_bias``.
    """

    empirical_mse: float
    std_error: float
    theoretical_mse: float
    reps: int
    seed: int
    mean_error: float
    mean_error_se: float
    theoretical_bias: float

    @property
    def z_score(self) -> float:
        return (self.empirical_mse - self.theoretical_mse) / self.std_error


def _uniforms(bitgen: np.random.Philox, size: int) -> np.ndarray:
    raw = bitgen.random_raw(size)
    # 53 high bits to a double in (0, 1]
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def philox_normals(seed: int, block: int, size: int) -> np.ndarray:
    """``size`` standard normals from Philox4x64 keyed by ``(seed, block)``, via Box-Muller."""
    bitgen = np.random.Philox(key=np.array([seed, block], dtype=np.uint64))
    half = (size + 1) // 2
    u = _uniforms(bitgen, 2 * half)
    r = np.sqrt(-2.0 * np.log(u[:half]))
    ang = 2.0 * np.pi * u[half:]
    return np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:size]


def worst_case_bias(problem: DesignProblem, s, B: float) -> np.ndarray:
    """A bias vector of radius ``B`` attaining the worst-case bias of shrinkage ``s``."""
    s = np.asarray(s, dtype=float)
    r = problem.omega * (1.0 - s)
    kind = problem.norm.kind
    if kind == "linf":
        return B * np.sign(problem.omega)
    if kind == "weighted":
        return B * np.asarray(problem.norm.weights) * np.sign(problem.omega)
    if kind == "l2":
        nrm = np.linalg.norm(r)
        return B * r / nrm if nrm > 0 else np.zeros(problem.p)
    b = np.zeros(problem.p)
    j = int(np.argmax(np.abs(r)))
    b[j] = B * np.sign(problem.omega[j])
    return b


def monte_carlo_mse(
    problem: DesignProblem, x, gamma, b, reps: int = 100_000, seed: int = 0, *, theta=None, workers: int = 1
) -> McReport:
    """Simulate the shrinkage estimator of the target under bias ``b``.

    Observational estimates are drawn from ``N(theta + b, sigma_obs)`` and
    experimental ones from ``N(theta_j, v_j**2 / n_j)`` with Neyman sizes
    ``n_j``. Replications are split into fixed blocks of 16384 keyed by
    ``(seed, block)``; per-block sums are added in block order, so the result
    does not depend on ``workers``.
    """
    if reps < 1000:
        raise ProblemValidationError("reps must be at least 1000")
    s = effective_shrinkage(x, gamma)
    b = np.asarray(b, dtype=float)
    if b.shape != (problem.p,) or not np.all(np.isfinite(b)):
        raise ProblemValidationError("b must be a finite vector of length p")
    theta = problem.theta_obs if theta is None else np.asarray(theta, dtype=float)
    p = problem.p
    gam = np.asarray(gamma, dtype=float)
    use_exp = s > 0
    n = neyman_allocation(problem, s) if use_exp.any() else np.zeros(p)
    exp_sd = np.sqrt(problem.v2[use_exp] / n[use_exp])
    eig, vec = np.linalg.eigh(problem.sigma_obs)
    root = vec * np.sqrt(np.clip(eig, 0.0, None))
    m = int(use_exp.sum())
    w_exp = np.where(use_exp, gam, 0.0)
    tau = float(problem.omega @ theta)

    def run_block(block: int):
        size = min(MC_BLOCK, reps - block * MC_BLOCK)
        z = philox_normals(seed, block, size * (p + m)).reshape(size, p + m)
        obs = theta + b + z[:, :p] @ root.T
        est = obs.copy()
        if m:
            exp = theta[use_exp] + z[:, p:] * exp_sd
            est[:, use_exp] = w_exp[use_exp] * exp + (1.0 - w_exp[use_exp]) * obs[:, use_exp]
        err = est @ problem.omega - tau
        e2 = err * err
        return float(err.sum()), float(e2.sum()), float((e2 * e2).sum())

    blocks = range(math.ceil(reps / MC_BLOCK))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = list(pool.map(run_block, blocks))
    else:
        sums = [run_block(k) for k in blocks]
    s1 = math.fsum(r[0] for r in sums)
    s2 = math.fsum(r[1] for r in sums)
    s4 = math.fsum(r[2] for r in sums)
    mse = s2 / reps
    var_e2 = max(s4 / reps - mse * mse, 0.0) * reps / (reps - 1)
    mean_err = s1 / reps
    var_err = max(mse - mean_err * mean_err, 0.0) * reps / (reps - 1)
    bias = float(np.sum(problem.omega * (1.0 - s) * b))
    theo = compute_alpha(problem, s) + bias * bias
    return McReport(
        empirical_mse=mse,
        std_error=math.sqrt(var_e2 / reps),
        theoretical_mse=theo,
        reps=reps,
        seed=seed,
        mean_error=mean_err,
        mean_error_se=math.sqrt(var_err / reps),
        theoretical_bias=bias,
    )
