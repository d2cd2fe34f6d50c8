"""Exception types shared across the package.

The CLI maps :class:`PreconditionError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class PreconditionError(ValueError):
    """A guard on inputs or resources was violated before any work started."""


class NumericalError(RuntimeError):
    """A run produced non-finite values or breached an invariant."""
