"""Exception hierarchy shared across the package."""


class TiedError(Exception):
    """Base class for all package errors."""


class GroupError(TiedError, ValueError):
    """Unknown group name, invalid size or malformed descriptor."""


class GroupMismatchError(TiedError, ValueError):
    pass


class MembershipError(TiedError, ValueError):
    """A matrix is not (numerically) an element of the claimed group."""


class NumericRangeError(TiedError, OverflowError):
    pass


class GridError(TiedError, ValueError):
    """A time value does not sit on the discretization grid."""


class EvaluationError(TiedError, FloatingPointError):
    """A function evaluation returned a non-finite value."""


class EstimationError(TiedError, RuntimeError):
    """Every Monte Carlo term of a score estimate was non-finite."""


class HorizonError(TiedError, ValueError):
    """A homography sends a point to (or near) the line at infinity."""


class ConfigError(TiedError, ValueError):
    pass
