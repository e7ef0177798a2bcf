"""Exception hierarchy.

Every error carries a short ``code`` (the class name) and the process exit
code the CLI should use: 2 for malformed input, 3 for estimation failures.
"""


class OPJError(Exception):
    exit_code = 3

    @property
    def code(self) -> str:
        return type(self).__name__


class InputError(OPJError, ValueError):
    exit_code = 2


class MalformedInput(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class InvalidTreatmentIndicator(InputError):
    pass


class EmptyArm(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class EstimationError(OPJError):
    exit_code = 3


class DivisionByZero(EstimationError, ZeroDivisionError):
    pass


class RankDeficient(EstimationError):
    def __init__(self, message: str, arm: int | None = None):
        super().__init__(message)
        self.arm = arm


class SubsetTooSmall(EstimationError):
    def __init__(self, message: str, arm: int | None = None):
        super().__init__(message)
        self.arm = arm


class DimensionMismatch(EstimationError, ValueError):
    pass


class DegenerateSample(EstimationError):
    pass


class TooFewDistinctValues(EstimationError):
    pass


class TooManyClasses(EstimationError):
    pass


class EmptyCell(EstimationError):
    pass


class ArmSmallerThanB(EstimationError):
    pass
