"""Exception types shared across the package."""


class DegenerateQuaternionError(ValueError):
    """Quaternion norm too small to define a rotation."""


class DegenerateSegmentError(ValueError):
    """Corridor segment endpoints coincide; no axis direction exists."""


class SimplexViolationError(ValueError):
    """Barycentric weights are not on the probability simplex."""


class IncompleteRecordError(ValueError):
    """Trajectory record does not end at the goal / is malformed."""


class CostMismatchError(ValueError):
    """Stored cost-to-go fails the telescoping identity."""


class InsufficientStatesError(ValueError):
    """A stored iteration has fewer states than the requested neighbor count."""


class UnknownIterationError(KeyError):
    """Requested iteration id is not present in the store."""
