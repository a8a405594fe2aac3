"""Exception types raised across the package."""


class AfietiError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(AfietiError, ValueError):
    pass


class SingularMatrix(AfietiError, ValueError):
    pass


class NumericalFailure(AfietiError, RuntimeError):
    pass


class SingularGeometry(AfietiError, ValueError):
    pass


class RedundantConstraints(AfietiError, ValueError):
    pass


class RigidModeError(AfietiError, ValueError):
    pass


class ApproximationDomainError(AfietiError, ValueError):
    pass


class ScalingError(AfietiError, ValueError):
    pass


class SubspaceError(AfietiError, RuntimeError):
    pass
