"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` used by the CLI:
2 usage, 3 data/schema, 4 numerical/degenerate, 5 I/O.
"""


class VisyReveError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class UsageError(VisyReveError):
    exit_code = 2


# data / schema (exit code 3)


class DataError(VisyReveError):
    exit_code = 3


class SchemaError(DataError):
    pass


class MissingFile(DataError):
    pass


class BadQuaternion(DataError):
    pass


class IdCollision(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyMask(DataError):
    pass


class KTooLarge(DataError):
    pass


class CountMismatch(DataError):
    pass


class MissingMesh(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# numerical / degenerate (exit code 4)


class NumericalError(VisyReveError):
    exit_code = 4


class PointBehindCamera(NumericalError):
    pass


class NonPositiveDepth(NumericalError):
    pass


class DegenerateIntrinsics(NumericalError):
    pass


class SingularHomography(NumericalError):
    pass


class ZeroRange(NumericalError):
    pass


class EmptyOverlap(NumericalError):
    pass


class KeypointOutOfView(NumericalError):
    pass


class RejectionBudgetExhausted(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class InsufficientPairs(NumericalError):
    pass


class TooFewSamples(NumericalError):
    pass


class TargetUnreachable(NumericalError):
    pass


class MaxIterationsExceeded(NumericalError):
    pass


class NoValidSource(NumericalError):
    pass


# I/O (exit code 5)


class IoError(VisyReveError):
    exit_code = 5
