"""Exception hierarchy shared by all modules."""


class EBEError(Exception):
    """Base class for all solver errors."""


class InvalidData(EBEError, ValueError):
    """Rejected holomorphic data; ``invariant`` names the violated condition."""

    invariant = "invalid"

    def __init__(self, message=""):
        super().__init__(f"{self.invariant}: {message}" if message else self.invariant)


class DegreeViolation(InvalidData):
    invariant = "DegreeViolation"


class NotCoprime(InvalidData):
    invariant = "NotCoprime"


class ZeroP(InvalidData):
    invariant = "ZeroP"


class RootClusterAmbiguity(EBEError):
    pass


class BadGrading(EBEError, ValueError):
    pass


class DomainError(EBEError, ValueError):
    pass


class DegenerateGeometry(EBEError):
    pass


class GaugeMismatch(EBEError):
    pass


class SingularMetric(EBEError):
    pass


class NewtonStall(EBEError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContinuationStall(EBEError):
    def __init__(self, message, last_t=None, state=None):
        super().__init__(message)
        self.last_t = last_t
        self.state = state


class KrylovStall(EBEError):
    def __init__(self, message, x=None, residual=None):
        super().__init__(message)
        self.x = x
        self.residual = residual


class LogBranch(EBEError):
    pass


class FactorizationFailure(EBEError):
    pass


class CoincidentPoints(EBEError, ValueError):
    pass


class InsufficientDynamicRange(EBEError):
    pass
