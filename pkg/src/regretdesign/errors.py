"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`DesignError`,
so callers (and the CLI) can separate bad input from solver trouble.
"""


class DesignError(Exception):
    """Base class for all package errors."""


class ProblemValidationError(DesignError, ValueError):
    """Input does not describe a valid design problem."""


class ZeroSensitivity(ProblemValidationError):
    pass


class NonPSDCovariance(ProblemValidationError):
    pass


class DimensionMismatch(ProblemValidationError):
    pass


class EmptyFeasibilitySet(ProblemValidationError):
    pass


class NonpositiveBudget(ProblemValidationError):
    pass


class EnumerationTooLarge(DesignError):
    pass


class NoActiveArm(DesignError, ValueError):
    pass


class SolverError(DesignError):
    """The optimization could not produce a finite answer."""


class Infeasible(SolverError):
    pass


class AllInfeasible(SolverError):
    pass


class NonConvergence(SolverError):
    pass


class SingularNormalMatrix(DesignError, ValueError):
    pass


class VertexEnumerationTooLarge(DesignError):
    pass


class EmptyCandidateSet(DesignError, ValueError):
    pass


class DegenerateAssignment(DesignError, ValueError):
    pass


class GridTooLarge(DesignError):
    pass


class SingularDenominator(DesignError, ValueError):
    pass
