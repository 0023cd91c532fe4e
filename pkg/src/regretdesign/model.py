"""Domain types for the shrinkage-form design problem.

A :class:`DesignProblem` bundles everything the solver needs: sensitivities of
the target to each parameter, the observational estimates and their covariance,
one experimental arm per parameter, a budget, the set of admissible arm
selections and the norm that shapes the bias ambiguity set.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyFeasibilitySet,
    EnumerationTooLarge,
    NonPSDCovariance,
    NonpositiveBudget,
    ProblemValidationError,
    ZeroSensitivity,
)

DEFAULT_ENUMERATION_CAP = 2**20

Design = tuple[int, ...]


class GammaPolicy(str, enum.Enum):
    FREE = "free"
    EXPERIMENT_ONLY = "experiment_only"


@dataclass(frozen=True)
class NormSpec:
    """Norm of the bias ambiguity ball.

    ``kind`` is one of ``"linf"``, ``"l1"``, ``"l2"`` or ``"weighted"``; the
    weighted norm bounds ``|b_j| <= k_j B`` coordinate-wise.
    """

    kind: str = "linf"
    weights: tuple[float, ...] | None = None

    KINDS = ("linf", "l1", "l2", "weighted")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ProblemValidationError(f"norm.kind must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "weighted":
            if self.weights is None or len(self.weights) == 0:
                raise ProblemValidationError("norm.weights required for weighted norm")
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ProblemValidationError("norm.weights must be finite and strictly positive")
            object.__setattr__(self, "weights", tuple(float(v) for v in w))
        elif self.weights is not None:
            raise ProblemValidationError(f"norm.weights only allowed for weighted norm, not {self.kind}")

    @classmethod
    def linf(cls):
        return cls("linf")

    @classmethod
    def l1(cls):
        return cls("l1")

    @classmethod
    def l2(cls):
        return cls("l2")

    @classmethod
    def weighted(cls, k: Iterable[float]):
        return cls("weighted", tuple(float(v) for v in k))


@dataclass(frozen=True)
class FeasibilitySet:
    """Admissible arm selections.

    ``mode`` is ``"at_most_k"`` (any selection of at most ``k`` arms, including
    none), ``"explicit"`` (a list of binary vectors) or ``"all"``.
    """

    mode: str = "all"
    k: int | None = None
    designs: tuple[Design, ...] | None = None

    @classmethod
    def at_most_k(cls, k: int):
        return cls("at_most_k", k=int(k))

    @classmethod
    def explicit(cls, designs: Iterable[Sequence[int]]):
        return cls("explicit", designs=tuple(tuple(int(v) for v in d) for d in designs))

    @classmethod
    def all(cls):
        return cls("all")


@dataclass(frozen=True)
class ExperimentArm:
    name: str
    v2: float
    cost: float = 1.0


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Inputs of the regret-optimal design program.

    Attributes
    ----------
    omega : ndarray (p,)
        Sensitivity of the target to each parameter.
    sigma_obs : ndarray (p, p)
        Covariance of the observational estimates.
    arms : tuple of ExperimentArm
        One arm per parameter; ``v2`` is the per-unit variance so that an
        experiment with ``n_j`` units has variance ``v2 / n_j``.
    budget : float
        Total budget; arm ``j`` costs ``arms[j].cost`` per unit.
    theta_obs : ndarray (p,)
        Observational point estimates (only used by simulation and reports).
    """

    omega: np.ndarray
    sigma_obs: np.ndarray
    arms: tuple[ExperimentArm, ...]
    budget: float
    feasibility: FeasibilitySet = field(default_factory=FeasibilitySet.all)
    norm: NormSpec = field(default_factory=NormSpec.linf)
    gamma_policy: GammaPolicy = GammaPolicy.FREE
    theta_obs: np.ndarray | None = None

    @property
    def p(self) -> int:
        return len(self.omega)

    @property
    def v2(self) -> np.ndarray:
        return np.array([a.v2 for a in self.arms], dtype=float)

    @property
    def costs(self) -> np.ndarray:
        return np.array([a.cost for a in self.arms], dtype=float)

    @property
    def arm_names(self) -> list[str]:
        return [a.name for a in self.arms]

    def with_budget(self, budget: float) -> "DesignProblem":
        return validate_problem(dataclasses.replace(self, budget=budget))

    def with_feasibility(self, feasibility: FeasibilitySet) -> "DesignProblem":
        return validate_problem(dataclasses.replace(self, feasibility=feasibility))

    def __eq__(self, other):
        if not isinstance(other, DesignProblem):
            return NotImplemented
        return (
            np.array_equal(self.omega, other.omega)
            and np.array_equal(self.sigma_obs, other.sigma_obs)
            and np.array_equal(self.theta_obs, other.theta_obs)
            and self.arms == other.arms
            and self.budget == other.budget
            and self.feasibility == other.feasibility
            and self.norm == other.norm
            and self.gamma_policy == other.gamma_policy
        )


def design_key(x: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Canonical order: fewer arms first, then lexicographic on selected indices."""
    idx = tuple(j for j, v in enumerate(x) if v)
    return len(idx), idx


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_covariance(sigma: np.ndarray, p: int) -> np.ndarray:
    if sigma.shape != (p, p):
        raise DimensionMismatch(f"sigma_obs must be {p}x{p}, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise NonPSDCovariance("sigma_obs has non-finite entries")
    sigma = (sigma + sigma.T) / 2
    if np.any(np.diag(sigma) <= 0):
        raise NonPSDCovariance("sigma_obs must have a strictly positive diagonal")
    eig, vec = np.linalg.eigh(sigma)
    floor = -1e-10 * max(eig[-1], 0.0)
    if eig[0] < floor:
        raise NonPSDCovariance(f"sigma_obs is not positive semi-definite (min eigenvalue {eig[0]:.3g})")
    if eig[0] < 0:
        # rounding noise in published tables
        sigma = (vec * np.clip(eig, 0, None)) @ vec.T
        sigma = (sigma + sigma.T) / 2
    return sigma


def _normalize_feasibility(feas: FeasibilitySet, p: int) -> FeasibilitySet:
    if feas.mode == "all":
        return FeasibilitySet.all()
    if feas.mode == "at_most_k":
        if feas.k is None or not 1 <= feas.k <= p:
            raise ProblemValidationError(f"feasibility.k must satisfy 1 <= k <= {p}, got {feas.k}")
        return FeasibilitySet.at_most_k(feas.k)
    if feas.mode == "explicit":
        if not feas.designs:
            raise EmptyFeasibilitySet("explicit feasibility list is empty")
        seen = set()
        for d in feas.designs:
            if len(d) != p:
                raise DimensionMismatch(f"feasible design {d} has length {len(d)}, expected {p}")
            if any(v not in (0, 1) for v in d):
                raise ProblemValidationError(f"feasible design {d} is not binary")
            seen.add(tuple(int(v) for v in d))
        return FeasibilitySet.explicit(sorted(seen, key=design_key))
    raise ProblemValidationError(f"unknown feasibility mode {feas.mode!r}")


def validate_problem(raw: DesignProblem) -> DesignProblem:
    """Check every invariant and return a normalized, read-only copy.

    The covariance is symmetrized and explicit design lists are deduplicated
    and put in canonical order. The function is idempotent.
    """
    omega = np.asarray(raw.omega, dtype=float).ravel()
    p = omega.size
    if p < 1:
        raise DimensionMismatch("omega must have at least one entry")
    if not np.all(np.isfinite(omega)):
        raise ProblemValidationError("omega must be finite")
    if np.any(omega == 0):
        zeros = [int(j) for j in np.flatnonzero(omega == 0)]
        raise ZeroSensitivity(f"omega has zero entries at positions {zeros}; every sensitivity must be nonzero")
    sigma = _check_covariance(np.atleast_2d(np.asarray(raw.sigma_obs, dtype=float)), p)

    arms = tuple(raw.arms)
    if len(arms) != p:
        raise DimensionMismatch(f"expected {p} arms, got {len(arms)}")
    for a in arms:
        if not (math.isfinite(a.v2) and a.v2 > 0):
            raise ProblemValidationError(f"arm {a.name!r}: v2 must be positive and finite")
        if not (math.isfinite(a.cost) and a.cost > 0):
            raise ProblemValidationError(f"arm {a.name!r}: cost must be positive and finite")
    arms = tuple(ExperimentArm(str(a.name), float(a.v2), float(a.cost)) for a in arms)

    budget = float(raw.budget)
    if not (math.isfinite(budget) and budget > 0):
        raise NonpositiveBudget(f"budget must be positive and finite, got {raw.budget}")

    theta = np.zeros(p) if raw.theta_obs is None else np.asarray(raw.theta_obs, dtype=float).ravel()
    if theta.size != p:
        raise DimensionMismatch(f"theta_obs has length {theta.size}, expected {p}")

    norm = raw.norm
    if norm.kind == "weighted" and len(norm.weights) != p:
        raise DimensionMismatch(f"norm.weights has length {len(norm.weights)}, expected {p}")

    return DesignProblem(
        omega=_readonly(omega),
        sigma_obs=_readonly(sigma),
        arms=arms,
        budget=budget,
        feasibility=_normalize_feasibility(raw.feasibility, p),
        norm=norm,
        gamma_policy=GammaPolicy(raw.gamma_policy),
        theta_obs=_readonly(theta),
    )


def count_feasible(problem: DesignProblem) -> int:
    p = problem.p
    feas = problem.feasibility
    if feas.mode == "all":
        return 2**p
    if feas.mode == "at_most_k":
        return sum(math.comb(p, i) for i in range(feas.k + 1))
    return len(feas.designs)


def _iter_designs(p: int, k: int):
    for size in range(k + 1):
        for idx in itertools.combinations(range(p), size):
            x = [0] * p
            for j in idx:
                x[j] = 1
            yield tuple(x)


def feasible_designs(problem: DesignProblem, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Design]:
    """All admissible binary selections in canonical order.

    The empty selection (observational data only) is included unless an
    explicit list leaves it out.
    """
    feas = problem.feasibility
    if feas.mode == "explicit":
        return list(feas.designs)
    if count_feasible(problem) > cap:
        raise EnumerationTooLarge(
            f"{count_feasible(problem)} feasible designs exceed the enumeration cap {cap}"
        )
    k = problem.p if feas.mode == "all" else feas.k
    return list(_iter_designs(problem.p, k))


def make_problem(
    omega,
    sigma_obs,
    v2,
    budget,
    *,
    costs=None,
    names=None,
    feasibility: FeasibilitySet | None = None,
    norm: NormSpec | None = None,
    gamma_policy: GammaPolicy | str = GammaPolicy.FREE,
    theta_obs=None,
) -> DesignProblem:
    """Convenience constructor from plain arrays; returns a validated problem."""
    omega = np.asarray(omega, dtype=float).ravel()
    p = omega.size
    v2 = np.broadcast_to(np.asarray(v2, dtype=float), (p,))
    costs = np.ones(p) if costs is None else np.broadcast_to(np.asarray(costs, dtype=float), (p,))
    names = names or [f"arm{j + 1}" for j in range(p)]
    sigma = np.asarray(sigma_obs, dtype=float)
    if sigma.ndim == 1:
        sigma = np.diag(sigma)
    return validate_problem(
        DesignProblem(
            omega=omega,
            sigma_obs=sigma,
            arms=tuple(ExperimentArm(n, float(a), float(c)) for n, a, c in zip(names, v2, costs)),
            budget=budget,
            feasibility=feasibility or FeasibilitySet.all(),
            norm=norm or NormSpec.linf(),
            gamma_policy=GammaPolicy(gamma_policy),
            theta_obs=theta_obs,
        )
    )
