"""Exception types shared across the package."""


class EntropicDeconvError(Exception):
    """Base class for all package-specific errors."""


class InvalidMeasureError(EntropicDeconvError):
    """A discrete measure violates its invariants (weights, dimensions)."""


class DimensionMismatchError(EntropicDeconvError):
    """Operands live in different ambient dimensions."""


class InfeasibleTransportError(EntropicDeconvError):
    """A row or column of the cost matrix has no finite-cost route."""


class EmptyGibbsSupportError(EntropicDeconvError):
    """Every atom of the prior sits at infinite cost from the observation."""


class UnreachableObservationError(EntropicDeconvError):
    """An observation has zero convolution density under every atom.

    Carries the offending row index as ``row``.
    """

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"observation {row} is unreachable (density 0)")


class ConvergenceError(EntropicDeconvError):
    """An iterative solver ran out of iterations.

    Carries the last residual as ``residual`` for diagnostics.
    """

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")
