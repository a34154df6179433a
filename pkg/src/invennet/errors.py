"""Exception hierarchy shared by every module.

The CLI maps ``ContractError``/``FormatError``/``ImageIOError`` to exit code 1
and ``NumericError`` (including ``DivergenceError``) to exit code 2.
"""


class InvEnNetError(Exception):
    """Base class for all package errors."""


class ContractError(InvEnNetError, ValueError):
    """A caller broke an operation's precondition (shapes, ranges, flags)."""


class FormatError(InvEnNetError, ValueError):
    """A file is in an unsupported or malformed format."""


class ImageIOError(InvEnNetError, OSError):
    """Reading or writing a file failed (missing, truncated, unwritable)."""


class NumericError(InvEnNetError, ArithmeticError):
    """Non-finite values, hazardous divisions or singular systems."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, component, iteration=None):
        self.component = component
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"training diverged: non-finite {component}{where}")
