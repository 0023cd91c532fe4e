"""Moment selection with weighting matrices.

A linear GMM estimator with Jacobian ``Lambda`` and weight matrix ``W`` has
first-order error ``Gamma (g + b)`` with

    Gamma = -(Lambda' W Lambda)^{-1} Lambda' W,

where ``b`` is the bias of the moments. Experimental moments (the index set
``I``) are unbiased by design; the remaining moments are biased by at most
``B`` in a chosen norm. For a target ``Omega theta`` the summed worst-case MSE
is ``alpha + B**2 beta`` with

    alpha = Tr(Omega Gamma Sigma Gamma' Omega'),
    beta  = || [Omega Gamma]_{., not I} ||_*^2,

the dual-type norm being ``sup_{||u|| <= 1} ||M u||_2``. The adaptation regret
of a candidate ``(W, Sigma)`` from a finite menu is ``max(alpha/alpha*,
beta/beta*)`` with oracles taken over the menu.

:func:`embed_shrinkage` writes a shrinkage design as such a model, which ties
this module back to :mod:`regretdesign.regret_core`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCandidateSet,
    NonPSDCovariance,
    ProblemValidationError,
    SingularNormalMatrix,
    VertexEnumerationTooLarge,
)
from .model import DesignProblem, NormSpec
from .regret_core import RegretBreakdown, binding_side, effective_shrinkage, neyman_allocation, ratio

COND_LIMIT = 1e12
VERTEX_CAP = 24
_SIGN_CHUNK = 2**15


@dataclass(frozen=True)
class Allocation:
    """Sample-size family for the experimental block of ``Sigma``.

    Experimental moment ``i`` built from ``n_i`` units has variance
    ``v2[i] / n_i``; sizes satisfy ``sum(costs * n) = budget`` and are chosen
    to minimize ``alpha`` (Neyman allocation).
    """

    v2: tuple[float, ...]
    costs: tuple[float, ...]
    budget: float


@dataclass(frozen=True, eq=False)
class Candidate:
    """One entry of the design menu: a weight matrix and a moment covariance.

    With an ``allocation`` the experimental diagonal of ``sigma`` is replaced
    by the Neyman-optimal ``v2 / n`` for the candidate's weights.
    """

    W: np.ndarray
    sigma: np.ndarray
    label: str = ""
    allocation: Allocation | None = None


@dataclass(frozen=True, eq=False)
class MomentModel:
    """Linear moment model with a finite menu of candidate designs.

    Attributes
    ----------
    lam : ndarray (p_g, d)
        Jacobian of the moments, full column rank.
    omega_mat : ndarray (q, d)
        Target map, ``tau = omega_mat @ theta``.
    experimental_idx : tuple of int
        Moments that are unbiased by design.
    candidates : tuple of Candidate
    norm : NormSpec
        Norm on the bias of the non-experimental moments; weighted norms carry
        one weight per moment (those on experimental moments are unused).
    """

    lam: np.ndarray
    omega_mat: np.ndarray
    experimental_idx: tuple[int, ...]
    candidates: tuple[Candidate, ...]
    norm: NormSpec = field(default_factory=NormSpec.linf)

    @property
    def n_moments(self) -> int:
        return self.lam.shape[0]

    @property
    def biased_idx(self) -> np.ndarray:
        mask = np.ones(self.n_moments, dtype=bool)
        mask[list(self.experimental_idx)] = False
        return np.flatnonzero(mask)


def make_moment_model(lam, omega_mat, experimental_idx, candidates, norm: NormSpec | None = None) -> MomentModel:
    """Validate inputs and return a :class:`MomentModel`.

    Raises
    ------
    DimensionMismatch, SingularNormalMatrix, NonPSDCovariance, EmptyCandidateSet
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    pg, d = lam.shape
    omega_mat = np.atleast_2d(np.asarray(omega_mat, dtype=float))
    if omega_mat.shape[1] != d:
        raise DimensionMismatch(f"omega_mat has {omega_mat.shape[1]} columns, expected {d}")
    if not np.any(omega_mat):
        raise ProblemValidationError("omega_mat must not be zero")
    if np.linalg.matrix_rank(lam) < d:
        raise SingularNormalMatrix("lambda must have full column rank")
    idx = tuple(sorted(set(int(i) for i in experimental_idx)))
    if any(not 0 <= i < pg for i in idx):
        raise DimensionMismatch(f"experimental indices must lie in [0, {pg})")
    norm = norm or NormSpec.linf()
    if norm.kind == "weighted" and len(norm.weights) != pg:
        raise DimensionMismatch(f"weighted norm needs {pg} weights, got {len(norm.weights)}")
    if not candidates:
        raise EmptyCandidateSet("the candidate menu is empty")
    checked = []
    for c in candidates:
        W = np.asarray(c.W, dtype=float)
        S = np.asarray(c.sigma, dtype=float)
        if W.shape != (pg, pg) or S.shape != (pg, pg):
            raise DimensionMismatch(f"candidate {c.label!r}: W and sigma must be {pg}x{pg}")
        S = (S + S.T) / 2
        eig = np.linalg.eigvalsh(S)
        if eig[0] < -1e-10 * max(eig[-1], 0.0):
            raise NonPSDCovariance(f"candidate {c.label!r}: sigma is not positive semi-definite")
        gamma_matrix(lam, W)
        if c.allocation is not None:
            a = c.allocation
            if len(a.v2) != len(idx) or len(a.costs) != len(idx):
                raise DimensionMismatch("allocation needs one variance and cost per experimental moment")
            if a.budget <= 0 or min(a.v2) <= 0 or min(a.costs) <= 0:
                raise ProblemValidationError("allocation variances, costs and budget must be positive")
        checked.append(Candidate(W, S, c.label, c.allocation))
    return MomentModel(lam, omega_mat, idx, tuple(checked), norm)


def gamma_matrix(lam, W) -> np.ndarray:
    """``Gamma = -(Lambda' W Lambda)^{-1} Lambda' W``.

    Raises
    ------
    SingularNormalMatrix
        If ``Lambda' W Lambda`` has condition number above ``1e12``.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    W = np.asarray(W, dtype=float)
    LW = lam.T @ W
    N = LW @ lam
    if not np.all(np.isfinite(N)) or np.linalg.cond(N) > COND_LIMIT:
        raise SingularNormalMatrix("Lambda' W Lambda is singular or badly conditioned")
    return -np.linalg.solve(N, LW)


def _signs(start: int, stop: int, m: int) -> np.ndarray:
    ints = np.arange(start, stop, dtype=np.int64)
    bits = (ints[:, None] >> np.arange(m - 1, dtype=np.int64)) & 1
    # first coordinate fixed at +1: u and -u give the same norm
    return np.hstack([np.ones((ints.size, 1)), 1.0 - 2.0 * bits])


def dual_norm(M, norm: NormSpec) -> float:
    """``sup ||M u||_2`` over the unit ball of ``norm``.

    l2 gives the spectral norm, l1 the largest column length, and l-infinity
    a maximum over sign vectors (enumerated exactly; for a single row it is
    the l1 norm of the row). Weighted balls rescale the columns first.

    Raises
    ------
    VertexEnumerationTooLarge
        For l-infinity with more than 24 columns and more than one row.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    q, m = M.shape
    if m == 0:
        return 0.0
    kind = norm.kind
    if kind == "weighted":
        if len(norm.weights) != m:
            raise DimensionMismatch(f"weighted norm has {len(norm.weights)} weights for {m} columns")
        M = M * np.asarray(norm.weights)
        kind = "linf"
    if kind == "l2":
        return float(np.linalg.norm(M, 2))
    if kind == "l1":
        return float(np.max(np.linalg.norm(M, axis=0)))
    if q == 1:
        return float(np.sum(np.abs(M)))
    if m > VERTEX_CAP:
        raise VertexEnumerationTooLarge(f"{m} columns exceed the vertex enumeration cap {VERTEX_CAP}")
    total = 2 ** (m - 1)
    best = 0.0
    for start in range(0, total, _SIGN_CHUNK):
        U = _signs(start, min(total, start + _SIGN_CHUNK), m)
        best = max(best, float(np.max(np.sum((U @ M.T) ** 2, axis=1))))
    return math.sqrt(best)


def alpha_gmm(omega_mat, gamma, sigma) -> float:
    """``Tr(Omega Gamma Sigma Gamma' Omega')``."""
    OG = np.atleast_2d(omega_mat) @ gamma
    return float(max(np.einsum("ij,jk,ik->", OG, sigma, OG), 0.0))


def beta_gmm(omega_mat, gamma, experimental_idx, norm: NormSpec) -> float:
    """Squared dual norm of ``Omega Gamma`` on the non-experimental columns."""
    OG = np.atleast_2d(omega_mat) @ gamma
    mask = np.ones(OG.shape[1], dtype=bool)
    mask[list(experimental_idx)] = False
    if not mask.any():
        return 0.0
    if norm.kind == "weighted":
        norm = NormSpec.weighted(np.asarray(norm.weights)[mask])
    return dual_norm(OG[:, mask], norm) ** 2


def candidate_sigma(model: MomentModel, index: int, omega_mat=None) -> np.ndarray:
    """Covariance of candidate ``index``, with its Neyman allocation applied if it has one."""
    c = model.candidates[index]
    if c.allocation is None:
        return c.sigma
    omega_mat = model.omega_mat if omega_mat is None else omega_mat
    G = gamma_matrix(model.lam, c.W)
    OG = np.atleast_2d(omega_mat) @ G
    idx = list(model.experimental_idx)
    a = c.allocation
    load = np.linalg.norm(OG[:, idx], axis=0) * np.sqrt(a.v2)
    S = c.sigma.copy()
    if np.any(load > 0):
        n = a.budget * (load / np.sqrt(a.costs)) / float(np.sum(load * np.sqrt(a.costs)))
        var = np.where(n > 0, np.asarray(a.v2) / np.where(n > 0, n, 1.0), np.asarray(a.v2))
    else:
        var = np.asarray(a.v2, dtype=float)
    S[np.ix_(idx, idx)] = 0.0
    S[idx, idx] = var
    return S


def candidate_indices(model: MomentModel, index: int) -> tuple[float, float]:
    """``(alpha, beta)`` of one candidate."""
    c = model.candidates[index]
    G = gamma_matrix(model.lam, c.W)
    S = candidate_sigma(model, index)
    return alpha_gmm(model.omega_mat, G, S), beta_gmm(model.omega_mat, G, model.experimental_idx, model.norm)


def gmm_oracles(model: MomentModel) -> tuple[float, float]:
    """Smallest ``alpha`` and smallest ``beta`` over the candidate menu."""
    if not model.candidates:
        raise EmptyCandidateSet("the candidate menu is empty")
    vals = [candidate_indices(model, i) for i in range(len(model.candidates))]
    return min(v[0] for v in vals), min(v[1] for v in vals)


def regret_gmm(model: MomentModel, candidate_index: int, *, oracles: tuple[float, float] | None = None) -> RegretBreakdown:
    """Adaptation regret of one candidate relative to the menu's oracles."""
    if not model.candidates:
        raise EmptyCandidateSet("the candidate menu is empty")
    a_star, b_star = oracles or gmm_oracles(model)
    alpha, beta = candidate_indices(model, candidate_index)
    r_var, r_bias = ratio(alpha, a_star), ratio(beta, b_star)
    return RegretBreakdown(alpha, a_star, beta, b_star, max(r_var, r_bias), binding_side(r_var, r_bias))


def mse_ratio_curve(model: MomentModel, candidate_index: int, B_grid) -> np.ndarray:
    """``(alpha + B**2 beta) / min over the menu of (alpha' + B**2 beta')`` along ``B_grid``."""
    vals = np.array([candidate_indices(model, i) for i in range(len(model.candidates))])
    B2 = np.asarray(B_grid, dtype=float) ** 2
    mse = vals[:, :1] + B2[None, :] * vals[:, 1:]
    best = mse.min(axis=0)
    num = mse[candidate_index]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(best == 0.0, np.where(num == 0.0, 1.0, np.inf), num / np.where(best == 0.0, 1.0, best))


# ------------------------------------------------------------- embedding


def _shrinkage_structure(problem: DesignProblem):
    p = problem.p
    lam = -np.vstack([np.eye(p), np.eye(p)])
    norm = problem.norm
    if norm.kind == "weighted":
        norm = NormSpec.weighted(tuple(norm.weights) + (1.0,) * p)
    return lam, problem.omega[None, :], tuple(range(p, 2 * p)), norm


def shrinkage_candidate(problem: DesignProblem, x, gamma, label: str = "") -> Candidate:
    """Weight matrix and covariance reproducing the shrinkage design ``(x, gamma)``.

    Moments are the ``p`` observational estimates followed by one experimental
    moment per arm. Arm ``j`` gets weight ``1 - s_j`` on its observational and
    ``s_j`` on its experimental moment, so ``Lambda' W Lambda = I`` and the
    GMM estimate is the shrinkage estimate. Experimental variances use the
    Neyman sizes; arms without a sample get a placeholder variance, which is
    harmless because their weight is zero.
    """
    s = effective_shrinkage(x, gamma)
    W = np.diag(np.concatenate([1.0 - s, s]))
    v2 = problem.v2
    var = v2.copy()
    if np.any(s > 0):
        n = neyman_allocation(problem, s)
        var = np.where(n > 0, v2 / np.where(n > 0, n, 1.0), v2)
    sigma = np.zeros((2 * problem.p, 2 * problem.p))
    sigma[: problem.p, : problem.p] = problem.sigma_obs
    sigma[problem.p :, problem.p :] = np.diag(var)
    return Candidate(W, sigma, label or "".join(str(int(v)) for v in x))


def shrinkage_menu(problem: DesignProblem, designs: Sequence[tuple]) -> MomentModel:
    """A moment model whose menu holds the given ``(x, gamma)`` shrinkage designs."""
    lam, om, idx, norm = _shrinkage_structure(problem)
    cands = [shrinkage_candidate(problem, x, g) for x, g in designs]
    return make_moment_model(lam, om, idx, cands, norm)


def embed_shrinkage(problem: DesignProblem, x, gamma) -> tuple[MomentModel, Candidate]:
    """The shrinkage design ``(x, gamma)`` as a one-candidate moment model."""
    model = shrinkage_menu(problem, [(x, gamma)])
    return model, model.candidates[0]
