"""Exception hierarchy.

Two families matter to callers: ``ConfigViolation`` for inputs that break a
hypothesis or a contract before any numerics run (CLI exit code 2), and
``NumericalFailure`` for things that go wrong during a computation (exit 3).
"""


class LabError(Exception):
    """Base class for every error raised by carlemanlab."""


class ConfigViolation(LabError, ValueError):
    """An input violates a stated hypothesis or precondition.

    ``inequality`` names the violated condition in words so that reports and
    CLI messages can point at it.
    """

    def __init__(self, message, inequality=None):
        super().__init__(message)
        self.inequality = inequality


class NumericalFailure(LabError, RuntimeError):
    """A computation failed or produced unusable output."""


# geometry
class X0InsideDomain(ConfigViolation):
    pass


class TimeBelowCritical(ConfigViolation):
    pass


class NoValidExponent(ConfigViolation):
    pass


class OmegaOutsideExtension(ConfigViolation):
    pass


# weights
class KindMismatch(ConfigViolation, TypeError):
    pass


class TimeOutOfRange(ConfigViolation):
    pass


class ParameterConflict(ConfigViolation):
    pass


# solvers / analysis
class CFLViolation(ConfigViolation):
    pass


class GridMismatch(ConfigViolation):
    pass


class EmptyGamma(ConfigViolation):
    pass


class NonzeroTrace(ConfigViolation):
    pass


class BoundaryViolation(ConfigViolation):
    pass


class UnstableSolution(NumericalFailure):
    pass


class LinearSolveFailure(NumericalFailure):
    pass


class ResidualTooLarge(NumericalFailure):
    pass


# harness / reconstruction
class ConditionViolation(ConfigViolation):
    pass


class NoAdmissibleBeta(ConfigViolation):
    pass


class FitUnderdetermined(ConfigViolation):
    pass


class MaxIterationsExceeded(NumericalFailure):
    """Raised only when the caller asks for strict convergence."""
