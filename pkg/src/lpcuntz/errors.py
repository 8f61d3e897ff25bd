"""Exception hierarchy shared by all modules."""


class LpCuntzError(Exception):
    """Base class for errors raised by this package."""


class DepthError(LpCuntzError, ValueError):
    """A cylinder depth is incompatible with the requested operation."""


class ResourceError(LpCuntzError):
    """A working depth would exceed the configured size cap."""


class ValidationError(LpCuntzError, ValueError):
    """An input violates a documented invariant."""


class SingularityError(LpCuntzError, ZeroDivisionError):
    """A negative power or a division hit a zero entry."""


class ConvergenceError(LpCuntzError):
    """An iterative solver exhausted its budget.

    ``result`` holds the best approximation available, if any.
    """

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class UnsupportedKindError(LpCuntzError, TypeError):
    """The operator structure does not admit a closed-form norm."""
