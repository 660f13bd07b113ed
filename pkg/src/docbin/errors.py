"""Exception types shared across the package.

The CLI maps these onto exit codes: ``FormatError`` -> 2, ``DomainError`` -> 3.
"""


class InvalidArgument(ValueError):
    """Bad shapes, sizes or parameter values."""


class DomainError(ValueError):
    """Input is well formed but the quantity is undefined for it."""


class FormatError(ValueError):
    """Unreadable or corrupted file."""


class InvalidState(RuntimeError):
    """Operation used out of order, e.g. backward with a stale cache."""
