from __future__ import annotations


class ShiftLabError(RuntimeError):
    """Base class for every error raised by shiftlab."""


class ContractError(ShiftLabError):
    """A caller broke an operation's precondition."""


class ShapeError(ContractError):
    pass


class NumericalError(ShiftLabError):
    """A public operation produced NaN or Inf."""
