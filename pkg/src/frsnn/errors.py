"""Exception types shared across the package."""


class FrsnnError(Exception):
    """Base class for package errors."""


class ShapeError(FrsnnError, ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class InputError(FrsnnError, ValueError):
    """Input values outside an operation's domain (non-finite, negative std, ...)."""


class NumericError(FrsnnError, ArithmeticError):
    """A computation produced non-finite intermediates."""


class ContractError(FrsnnError, RuntimeError):
    """A cached/derived object was used outside the call pattern that produced it."""


class FormatError(FrsnnError, ValueError):
    """A file does not follow its documented binary/text layout."""


class DegenerateDataError(FrsnnError, ValueError):
    """A statistic is undefined for the provided data (single class, zero variance)."""
