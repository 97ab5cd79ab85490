"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TubeLaplaceError(Exception):
    """Base class for all package errors."""


class ShapeError(TubeLaplaceError, ValueError):
    pass


class ConfigError(TubeLaplaceError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericError(TubeLaplaceError, ArithmeticError):
    """A non-finite value appeared somewhere it must not.

    ``where`` names the layer, spine step or operator that produced it.
    """

    def __init__(self, message: str, where: str | int | None = None):
        self.where = where
        super().__init__(message if where is None else f"{message} (at {where})")


class TrainingDivergenceError(NumericError):
    pass


class MapNotConvergedError(TubeLaplaceError, ValueError):
    """The starting point of a tube is not a stationary point of the loss."""

    def __init__(self, message: str, grad_norm: float):
        self.grad_norm = grad_norm
        super().__init__(message)


class DenseGuardError(TubeLaplaceError):
    """Refusal to materialize an operator that is too large."""


class LanczosError(NumericError):
    pass


class PartialConvergenceError(LanczosError):
    """Lanczos stopped before ``k`` pairs converged.

    The pairs that did converge are kept on ``pairs``.
    """

    def __init__(self, message: str, pairs):
        self.pairs = pairs
        super().__init__(message)


class ShiftEstimateError(LanczosError):
    pass


class TransportError(NumericError):
    def __init__(self, message: str, column: int):
        self.column = column
        super().__init__(message, where=f"column {column}")


class IndefiniteCurvatureError(NumericError):
    pass


class LossDriftError(NumericError):
    """The spine left the valley; ``tube`` holds the elements built so far."""

    def __init__(self, message: str, tube, step: int):
        self.tube = tube
        self.step = step
        super().__init__(message, where=f"step {step}")
