"""Bundled applications.

General-equilibrium schooling target
    The policy effect of a cash transfer on school attendance combines an
    income effect ``theta_1``, a subsidy effect ``theta_2`` and a wage effect
    ``theta_3``:

        tau = theta_2 + y0 theta_1 + w0(theta) theta_3,
        w0(theta) = theta_2 / (-theta_3 - d),

    where ``y0`` is the income multiplier and ``d`` the slope of labor
    demand. Three experiments are available (UCT, CCT, job program), each
    identifying one parameter, with per-unit variance equal to the
    observational variance times the observational sample size.

Site selection
    Four areas with difference-in-differences estimates of a microfinance
    effect; the target is the population-weighted average effect and an
    experiment in area ``a`` with ``n_a`` treated and ``n_a`` control villages
    has variance ``2 v_pre,a**2 / n_a``.

:func:`sweep` produces, for a grid of budgets, the regret-optimal and
Neyman designs side by side.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ProblemValidationError, SingularDenominator
from .model import DesignProblem, FeasibilitySet, make_problem
from .regret_core import ComboOracle, compute_alpha, compute_beta, compute_oracles, effective_shrinkage, ratio
from .solver import DesignSolution, neyman_design, solve

DENOM_EPS = 1e-300


def _read_bundled(name: str) -> dict:
    text = resources.files("regretdesign").joinpath("data", name).read_text(encoding="utf-8")
    return json.loads(text)


# ------------------------------------------------------------------ GE model


def _wage_denominator(theta3: float, d: float) -> float:
    den = -theta3 - d
    if not math.isfinite(den) or abs(den) <= DENOM_EPS:
        raise SingularDenominator(f"-theta_3 - d must be nonzero, got {den}")
    return den


def ge_tau(theta, y0: float, d: float) -> float:
    """General-equilibrium effect ``theta_2 + y0 theta_1 + theta_2 theta_3 / (-theta_3 - d)``."""
    t1, t2, t3 = (float(v) for v in theta)
    den = _wage_denominator(t3, d)
    return t2 + y0 * t1 + (t2 / den) * t3


def ge_sensitivity(theta, y0: float, d: float) -> np.ndarray:
    """Gradient of :func:`ge_tau` in ``theta``.

    ``(y0, 1 + theta_3 / (-theta_3 - d), -theta_2 d / (-theta_3 - d)**2)``.
    """
    _, t2, t3 = (float(v) for v in theta)
    den = _wage_denominator(t3, d)
    return np.array([float(y0), 1.0 + t3 / den, -t2 * d / den**2])


def recover_demand_slope(theta3: float, omega2: float) -> float:
    """The ``d`` for which the subsidy sensitivity equals ``omega2``.

    Inverts ``omega2 = 1 + theta3 / (-theta3 - d)``, i.e.
    ``d = -theta3 - theta3 / (omega2 - 1)``.
    """
    if omega2 == 1.0 or theta3 == 0.0:
        raise SingularDenominator("omega2 = 1 or theta3 = 0 leaves d unidentified")
    return -theta3 - theta3 / (omega2 - 1.0)


@dataclass(frozen=True, eq=False)
class GeCalibration:
    """Observational calibration of the general-equilibrium target.

    ``n_obs`` only sets units: designs depend on budgets through
    ``n_tot / n_obs``.
    """

    theta_obs: np.ndarray
    sigma_obs: np.ndarray
    y0: float
    d: float
    n_obs: float
    arm_names: tuple[str, ...] = ("UCT", "CCT", "Job")
    published_std_errors: np.ndarray | None = None
    published_omega: np.ndarray | None = None

    def __post_init__(self):
        _wage_denominator(float(self.theta_obs[2]), self.d)
        if not math.isfinite(self.y0):
            raise ProblemValidationError("y0 must be finite")
        if not (self.n_obs > 0 and math.isfinite(self.n_obs)):
            raise ProblemValidationError("n_obs must be positive")

    @property
    def omega(self) -> np.ndarray:
        return ge_sensitivity(self.theta_obs, self.y0, self.d)

    @property
    def tau(self) -> float:
        return ge_tau(self.theta_obs, self.y0, self.d)


def load_ge_calibration(path: str | Path | None = None, *, n_obs: float | None = None) -> GeCalibration:
    """Read a calibration file (the bundled one by default).

    A null ``d`` is recovered from the published ``omega_2``.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else _read_bundled("ge_calibration.json")
    if doc.get("schema") != "regretdesign/ge-calibration-v1":
        raise ProblemValidationError(f"unexpected calibration schema {doc.get('schema')!r}")
    theta = np.asarray(doc["theta_obs"], dtype=float)
    sigma = np.asarray(doc["sigma_obs"], dtype=float) * float(doc.get("sigma_obs_scale", 1.0))
    d = doc.get("d")
    if d is None:
        d = recover_demand_slope(theta[2], float(doc["published_omega"][1]))
    return GeCalibration(
        theta_obs=theta,
        sigma_obs=sigma,
        y0=float(doc["y0"]),
        d=float(d),
        n_obs=float(n_obs if n_obs is not None else doc["n_obs"]),
        arm_names=tuple(doc.get("arm_names", ("UCT", "CCT", "Job"))),
        published_std_errors=np.asarray(doc["published_std_errors"]) if "published_std_errors" in doc else None,
        published_omega=np.asarray(doc["published_omega"]) if "published_omega" in doc else None,
    )


def build_ge_problem(cal: GeCalibration, n_tot: float, max_arms: int = 1, **kwargs) -> DesignProblem:
    """Design problem for a total experimental sample of ``n_tot``.

    Arm ``j`` has per-unit variance ``Sigma_jj * n_obs`` and unit cost, so an
    experiment of ``n_obs`` units is as precise as the observational estimate.
    """
    return make_problem(
        cal.omega,
        cal.sigma_obs,
        np.diag(cal.sigma_obs) * cal.n_obs,
        n_tot,
        names=list(cal.arm_names),
        feasibility=FeasibilitySet.at_most_k(max_arms),
        theta_obs=cal.theta_obs,
        **kwargs,
    )


# ------------------------------------------------------------- site selection


@dataclass(frozen=True, eq=False)
class SiteTable:
    """Area-level observational inputs.

    ``omega`` holds population shares renormalized to sum to one;
    ``omega_raw_sum`` records the sum before renormalization.
    """

    names: tuple[str, ...]
    n1: np.ndarray
    n0: np.ndarray
    v_pre2: np.ndarray
    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    omega: np.ndarray
    omega_raw_sum: float = 1.0

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "SiteTable":
        recs = list(records)
        if not recs:
            raise ProblemValidationError("site table is empty")
        col = lambda k: np.array([float(r[k]) for r in recs])  # noqa: E731
        omega = col("omega")
        v_pre2 = col("v_pre2")
        if np.any(omega < 0):
            raise ProblemValidationError("population shares must be nonnegative")
        if np.any(v_pre2 <= 0) or np.any(col("sigma2_hat") <= 0):
            raise ProblemValidationError("variances must be positive")
        total = float(omega.sum())
        if abs(total - 1.0) > 5e-3:
            raise ProblemValidationError(f"population shares sum to {total}, not 1 up to rounding")
        return cls(
            names=tuple(str(r["name"]) for r in recs),
            n1=col("n1"),
            n0=col("n0"),
            v_pre2=v_pre2,
            mu_hat=col("mu_hat"),
            sigma2_hat=col("sigma2_hat"),
            omega=omega / total,
            omega_raw_sum=total,
        )


def load_site_table(path: str | Path | None = None) -> SiteTable:
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else _read_bundled("karnataka_areas.json")
    if doc.get("schema") != "regretdesign/site-table-v1":
        raise ProblemValidationError(f"unexpected site table schema {doc.get('schema')!r}")
    return SiteTable.from_records(doc["areas"])


def build_site_problem(table: SiteTable, n1_total: float, max_areas: int = 1, **kwargs) -> DesignProblem:
    """Design problem with a budget of ``n1_total`` treated villages.

    Each treated village comes with one control village, so ``n_a`` treated
    villages give an area effect with variance ``2 v_pre,a**2 / n_a``.
    """
    if n1_total < 2 * max_areas:
        raise ProblemValidationError(f"n1_total must allow at least 2 treated villages per area, got {n1_total}")
    return make_problem(
        table.omega,
        table.sigma2_hat,
        2.0 * table.v_pre2,
        n1_total,
        names=list(table.names),
        feasibility=FeasibilitySet.at_most_k(max_areas),
        theta_obs=table.mu_hat,
        **kwargs,
    )


# ------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    n_tot: float
    arm_names: tuple[str, ...]
    optimal: DesignSolution
    neyman: DesignSolution

    def as_dict(self) -> dict:
        row: dict = {"n_tot": self.n_tot}
        for label, sol in (("opt", self.optimal), ("neyman", self.neyman)):
            for j, name in enumerate(self.arm_names):
                row[f"{label}_x_{name}"] = int(sol.x_star[j])
            for j, name in enumerate(self.arm_names):
                row[f"{label}_n_{name}"] = float(sol.n_star[j])
            for j, name in enumerate(self.arm_names):
                row[f"{label}_gamma_{name}"] = float(sol.gamma_star[j])
            row[f"{label}_alpha"] = sol.breakdown.alpha
            row[f"{label}_beta"] = sol.breakdown.beta
            row[f"{label}_regret"] = sol.t_star
        return row


def sweep(builder: Callable[[float], DesignProblem], n_grid: Iterable[float], *, workers: int = 1) -> list[SweepRow]:
    """Regret-optimal and Neyman designs along an ascending budget grid.

    Grid points are independent; with ``workers > 1`` they are solved in a
    thread pool and returned in grid order.
    """
    grid = [float(n) for n in n_grid]
    if not grid:
        raise ProblemValidationError("n_grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ProblemValidationError("n_grid must be strictly ascending")

    def row(n: float) -> SweepRow:
        problem = builder(n)
        oracles = compute_oracles(problem)
        return SweepRow(n, tuple(problem.arm_names), solve(problem, oracles=oracles), neyman_design(problem, oracles=oracles))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(row, grid))
    return [row(n) for n in grid]


def mse_ratio_report(problem: DesignProblem, B: float, designs: Mapping[str, tuple] | None = None) -> dict[str, float]:
    """Worst-case MSE at radius ``B`` relative to the best design that knows ``B``.

    ``designs`` maps labels to ``(x, gamma)``; by default the regret-optimal
    and Neyman designs are compared.
    """
    if not (B >= 0 and math.isfinite(B)):
        raise ProblemValidationError(f"B must be finite and nonnegative, got {B}")
    if designs is None:
        oracles = compute_oracles(problem)
        opt = solve(problem, oracles=oracles)
        ney = neyman_design(problem, oracles=oracles)
        designs = {"optimal": (opt.x_star, opt.gamma_star), "neyman": (ney.x_star, ney.gamma_star)}
    best = ComboOracle(problem)(1.0, B * B)
    out = {}
    for label, (x, gamma) in designs.items():
        s = effective_shrinkage(x, gamma)
        out[label] = ratio(compute_alpha(problem, s) + B * B * compute_beta(problem, s), best)
    return out
