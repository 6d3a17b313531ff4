"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: PreconditionError -> 2,
BudgetExceededError -> 3; everything else is an ordinary failure.
"""


class WalkopsError(Exception):
    """Base class for all package errors."""


class DescriptorMismatchError(WalkopsError):
    """Elements fed to an operation do not belong to the given descriptor."""


class ElementParseError(WalkopsError, ValueError):
    """Malformed element or descriptor text."""


class RadiusExhaustedError(WalkopsError):
    """A BFS-based computation ran past its configured radius."""


class BudgetExceededError(WalkopsError):
    """A support/memory/element budget was exceeded."""


class PreconditionError(WalkopsError):
    """A documented precondition of an operation does not hold."""


class IsotropyError(PreconditionError):
    """A measure expected to be radial/isotropic is not."""


class CoverageError(WalkopsError):
    """A kernel table or cache does not cover a requested entry."""
