"""Exception hierarchy shared across the package."""


class PivotalError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(PivotalError):
    """Input shapes are incompatible with the requested operation."""


class ValidationError(PivotalError):
    """A precondition on arguments or configuration is violated."""


class NumericalError(PivotalError):
    """A non-finite or otherwise invalid numerical value was produced."""
