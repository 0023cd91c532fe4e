"""Regret-optimal design of experiments combined with observational estimates.

Choose which experiments to run, how to split the sample between them, and how
much to shrink each experimental estimate toward its observational
counterpart, so that the worst case over the unknown size of the
observational bias of the ratio between the design's MSE and the best MSE
attainable with that size known is as small as possible.
"""

from .errors import (
    AllInfeasible,
    DesignError,
    Infeasible,
    NonConvergence,
    ProblemValidationError,
    SolverError,
)
from .model import (
    DesignProblem,
    ExperimentArm,
    FeasibilitySet,
    GammaPolicy,
    NormSpec,
    make_problem,
    validate_problem,
)
from .regret_core import (
    Binding,
    Oracles,
    RegretBreakdown,
    compute_alpha,
    compute_beta,
    compute_oracles,
    neyman_allocation,
    oracle_alpha_star,
    oracle_beta_star,
    regret,
)
from .solver import DesignSolution, inner_solve, neyman_design, solve, solve_bounded

__version__ = "0.1.0"

__all__ = [
    "AllInfeasible",
    "Binding",
    "DesignError",
    "DesignProblem",
    "DesignSolution",
    "ExperimentArm",
    "FeasibilitySet",
    "GammaPolicy",
    "Infeasible",
    "NonConvergence",
    "NormSpec",
    "Oracles",
    "ProblemValidationError",
    "RegretBreakdown",
    "SolverError",
    "compute_alpha",
    "compute_beta",
    "compute_oracles",
    "inner_solve",
    "make_problem",
    "neyman_allocation",
    "neyman_design",
    "oracle_alpha_star",
    "oracle_beta_star",
    "regret",
    "solve",
    "solve_bounded",
    "validate_problem",
]
