"""Exception hierarchy.

Two families matter to callers: ``ConfigError``/``ValueError``-style usage
problems, and ``NumericalFailure`` for runs that were well-posed but broke down
(blow-up, no convergence, degenerate regressions). The CLI maps the latter to
exit code 2.
"""


class MfsmpError(Exception):
    """Base class for every error raised by this package."""


# -- input validation -------------------------------------------------------

class InvalidInput(MfsmpError, ValueError):
    pass


class EmptyInput(InvalidInput):
    pass


class NonFiniteValue(InvalidInput):
    pass


class AlphaOutOfRange(InvalidInput):
    pass


class OrderOutOfRange(InvalidInput):
    pass


class SupportTooLarge(InvalidInput):
    pass


class MismatchedSupport(InvalidInput):
    pass


class EmptyMeasure(InvalidInput):
    pass


class ControlOutOfBox(InvalidInput):
    pass


class PolicyOutOfBox(ControlOutOfBox):
    pass


class UnknownFunctional(InvalidInput):
    pass


class InvalidDirection(InvalidInput):
    pass


class GridMismatch(InvalidInput):
    pass


class TooFewParticles(InvalidInput):
    pass


class MissingAux(InvalidInput):
    pass


class DegenerateSample(InvalidInput):
    pass


class ZeroMassPoint(InvalidInput):
    pass


class InvalidParams(InvalidInput):
    pass


class ConfigError(MfsmpError):
    pass


# -- numerical breakdowns ---------------------------------------------------

class NumericalFailure(MfsmpError):
    pass


class NonFiniteResult(NumericalFailure):
    pass


class BlowUp(NonFiniteResult):
    """A particle left the guard band |x| <= 1e6."""

    def __init__(self, message, step=None, particles=None):
        super().__init__(message)
        self.step = step
        self.particles = particles


class NoConvergence(NumericalFailure):
    """Iteration budget exhausted; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ReferenceNotConverged(NoConvergence):
    pass


class CostOverflow(NumericalFailure, OverflowError):
    pass


class RegressionFailure(NumericalFailure):
    pass


class NegativeV(NumericalFailure):
    pass


class NonFiniteDriver(NumericalFailure):
    pass


class RiccatiBlowup(NumericalFailure):
    pass
