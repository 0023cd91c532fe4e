"""Confidence-interval length regret for partially identified targets.

The target is only known to lie in ``[omega_lower' theta, omega_upper' theta]``
(to first order). A bias-aware interval pads each endpoint by the normal
quantile times its standard error and by ``B`` times its worst-case bias:

    lower = omega_lower' theta_hat - z sqrt(alpha_lower) - B sqrt(beta_lower)
    upper = omega_upper' theta_hat + z sqrt(alpha_upper) + B sqrt(beta_upper)

Its worst-case expected excess length over the identified set is ``A + B C``
with

    A = z (sqrt(alpha_upper) + sqrt(alpha_lower)),
    C = sqrt(beta_upper) + sqrt(beta_lower) + sqrt(beta_{upper - lower}),

so the length regret of a candidate is ``max(A/A*, C/C*)``. When the target is
point identified the regret is the square root of the MSE regret, and both
criteria pick the same candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _normal

from .errors import DegenerateAssignment, EmptyCandidateSet, ProblemValidationError
from .gmm import MomentModel, alpha_gmm, beta_gmm, gamma_matrix
from .model import NormSpec
from .regret_core import RegretBreakdown, binding_side, ratio


@dataclass(frozen=True, eq=False)
class Envelope:
    """Gradients of the lower and upper ends of the identified set, and the level."""

    omega_lower: np.ndarray
    omega_upper: np.ndarray
    eta: float = 0.05

    def __post_init__(self):
        lo = np.asarray(self.omega_lower, dtype=float).ravel()
        up = np.asarray(self.omega_upper, dtype=float).ravel()
        if lo.shape != up.shape:
            raise ProblemValidationError("envelope gradients must have the same length")
        if not (np.any(lo) or np.any(up)):
            raise ProblemValidationError("at least one envelope gradient must be nonzero")
        if not 0.0 < self.eta < 1.0:
            raise ProblemValidationError(f"eta must lie in (0, 1), got {self.eta}")
        object.__setattr__(self, "omega_lower", lo)
        object.__setattr__(self, "omega_upper", up)

    @property
    def z(self) -> float:
        """Two-sided normal critical value ``z_{1 - eta/2}``."""
        return float(_normal.ppf(1.0 - self.eta / 2.0))

    @property
    def width_gradient(self) -> np.ndarray:
        return self.omega_upper - self.omega_lower

    @property
    def is_point_identified(self) -> bool:
        return bool(np.array_equal(self.omega_lower, self.omega_upper))


@dataclass(frozen=True)
class WorstCaseInterval:
    lower: float
    upper: float
    B: float

    @property
    def length(self) -> float:
        return self.upper - self.lower


def manski_envelope(pi1: float, eta: float = 0.05) -> Envelope:
    """Worst-case bounds on an average effect with missing binary outcomes.

    With response indicator ``R`` and parameters ``theta = (E[Y R 1{D=1}],
    P(R=0, D=1), E[Y R 1{D=0}], P(R=0, D=0))``, imputing the missing outcomes
    at their extremes gives the linear bounds with gradients
    ``omega_lower = (1/pi1, 0, -1/pi0, -1/pi0)`` and
    ``omega_upper = (1/pi1, 1/pi1, -1/pi0, 0)``, where ``pi0 = 1 - pi1``.

    Raises
    ------
    DegenerateAssignment
        If ``pi1`` is not strictly between 0 and 1.
    """
    if not 0.0 < pi1 < 1.0:
        raise DegenerateAssignment(f"treatment share must lie in (0, 1), got {pi1}")
    pi0 = 1.0 - pi1
    lower = np.array([1 / pi1, 0.0, -1 / pi0, -1 / pi0])
    upper = np.array([1 / pi1, 1 / pi1, -1 / pi0, 0.0])
    return Envelope(lower, upper, eta)


def variance_index_A(envelope: Envelope, gamma, sigma) -> float:
    """``z (sqrt(alpha_upper) + sqrt(alpha_lower))``."""
    au = alpha_gmm(envelope.omega_upper[None, :], gamma, sigma)
    al = alpha_gmm(envelope.omega_lower[None, :], gamma, sigma)
    return envelope.z * (math.sqrt(au) + math.sqrt(al))


def bias_index_C(envelope: Envelope, gamma, experimental_idx, norm: NormSpec) -> float:
    """``sqrt(beta_upper) + sqrt(beta_lower) + sqrt(beta_{upper-lower})``."""
    total = 0.0
    for w in (envelope.omega_upper, envelope.omega_lower, envelope.width_gradient):
        total += math.sqrt(beta_gmm(w[None, :], gamma, experimental_idx, norm))
    return total


def worst_case_interval(envelope: Envelope, gamma, sigma, experimental_idx, norm: NormSpec, theta_hat, B: float) -> WorstCaseInterval:
    """Bias-aware interval for bias radius ``B``."""
    if not (B >= 0 and math.isfinite(B)):
        raise ProblemValidationError(f"B must be finite and nonnegative, got {B}")
    theta_hat = np.asarray(theta_hat, dtype=float)
    z = envelope.z
    lo_w, up_w = envelope.omega_lower, envelope.omega_upper
    al = alpha_gmm(lo_w[None, :], gamma, sigma)
    au = alpha_gmm(up_w[None, :], gamma, sigma)
    bl = beta_gmm(lo_w[None, :], gamma, experimental_idx, norm)
    bu = beta_gmm(up_w[None, :], gamma, experimental_idx, norm)
    lower = float(lo_w @ theta_hat) - z * math.sqrt(al) - B * math.sqrt(bl)
    upper = float(up_w @ theta_hat) + z * math.sqrt(au) + B * math.sqrt(bu)
    return WorstCaseInterval(lower, upper, float(B))


def ci_loss(A: float, C: float, B: float) -> float:
    """Worst-case expected excess length ``A + B C``."""
    return A + B * C


def _fixed_sigma(model: MomentModel, index: int) -> np.ndarray:
    c = model.candidates[index]
    if c.allocation is not None:
        raise ProblemValidationError(
            f"candidate {c.label!r}: interval length regret needs a fixed covariance, not an allocation family"
        )
    return c.sigma


def ci_indices(envelope: Envelope, model: MomentModel, index: int) -> tuple[float, float]:
    """``(A, C)`` of one candidate."""
    G = gamma_matrix(model.lam, model.candidates[index].W)
    return (
        variance_index_A(envelope, G, _fixed_sigma(model, index)),
        bias_index_C(envelope, G, model.experimental_idx, model.norm),
    )


def ci_regret(envelope: Envelope, model: MomentModel, candidate_index: int) -> RegretBreakdown:
    """Interval-length regret ``max(A/A*, C/C*)``; oracles over the candidate menu.

    The breakdown reuses the MSE field names: ``alpha`` holds ``A`` and
    ``beta`` holds ``C``.
    """
    if not model.candidates:
        raise EmptyCandidateSet("the candidate menu is empty")
    if envelope.omega_lower.size != model.lam.shape[1]:
        raise ProblemValidationError("envelope length must equal the number of parameters")
    vals = [ci_indices(envelope, model, i) for i in range(len(model.candidates))]
    a_star = min(v[0] for v in vals)
    c_star = min(v[1] for v in vals)
    A, C = vals[candidate_index]
    r_var, r_bias = ratio(A, a_star), ratio(C, c_star)
    return RegretBreakdown(A, a_star, C, c_star, max(r_var, r_bias), binding_side(r_var, r_bias))
