"""Exception types raised across the package."""


class EETError(Exception):
    """Base class for all package errors."""


class ShapeError(EETError, ValueError):
    """Array shapes or geometry do not agree."""


class NumericError(EETError, ArithmeticError):
    """A numerical routine failed (non-convergence, loss of definiteness)."""


class DegenerateInputError(EETError, ValueError):
    """Input for which the quantity is undefined, e.g. a zero-norm vector."""


class BoundsError(EETError, IndexError):
    """An index or count is outside its valid range."""


class FormatError(EETError, ValueError):
    """A binary file or config does not follow its declared format."""


class PreconditionError(EETError, ValueError):
    """An operation was called outside its documented domain."""
