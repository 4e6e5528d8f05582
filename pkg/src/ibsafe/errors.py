"""Exception hierarchy shared by the solver, simulator and checkers."""


class IbsError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(IbsError, ValueError):
    """An instance description violates the model constraints."""


class EmptySupport(ValidationError):
    pass


class ProbabilitiesDontSum(ValidationError):
    pass


class InvalidSupport(ValidationError):
    """Duplicate support values, non-positive probabilities, or non-finite numbers."""


class ZeroMeanArm(ValidationError):
    pass


class TooManyArms(ValidationError):
    pass


class SignViolation(IbsError, ValueError):
    """Pair portfolio requested with a non-positive or non-negative mean."""


class InstanceTooLarge(IbsError, ValueError):
    pass


class NotPValid(IbsError, ValueError):
    pass


class BadPermutation(IbsError, ValueError):
    pass


class WrongAboveCount(IbsError, ValueError):
    pass


class HorizonZero(IbsError, ValueError):
    pass


class SafetyViolation(IbsError, RuntimeError):
    """A played portfolio had negative Bayesian expectation.

    This is an internal bug sentinel: the simulator only ever plays
    portfolios that are safe by construction.
    """


class BoundVacuous(IbsError, ValueError):
    pass


class GeneratorModeMismatch(IbsError, ValueError):
    pass


class NotTwoPoint(IbsError, ValueError):
    pass


class EpsilonOutOfRange(IbsError, ValueError):
    pass


class UsageError(IbsError, ValueError):
    """Missing or conflicting command-line options; the message names the fix."""
