"""Exception taxonomy shared across the package.

Every failure mode raised on purpose derives from GeloError so callers can
catch one base class at process boundaries (the CLI maps them to exit codes).
"""


class GeloError(Exception):
    """Base class for all errors raised deliberately by this package."""


class DimensionError(GeloError, ValueError):
    """Shapes are empty, mismatched, or otherwise unusable."""


class ParameterError(GeloError, ValueError):
    """A scalar parameter is out of its documented range."""


class SingularMatrixError(GeloError, ArithmeticError):
    """A linear system has no usable solution."""


class ConditioningError(GeloError, ArithmeticError):
    """A matrix is too ill-conditioned for the requested operation."""

    def __init__(self, condition: float, limit: float):
        self.condition = condition
        self.limit = limit
        super().__init__(
            f"condition number {condition:.6g} exceeds allowed {limit:.6g}"
        )


class EmptyResidualError(GeloError, ValueError):
    """Residualization removed every unconstrained direction."""


class InsufficientUnknownsError(GeloError, ValueError):
    """Too few non-anchor rows remain for a separation problem."""


class MetricUndefinedError(GeloError, ValueError):
    """A metric has no defined value for this input (e.g. zero covariance)."""


class TransportError(GeloError, OSError):
    """Socket-level or framing-level failure in the offload harness."""


class ProtocolViolation(GeloError, RuntimeError):
    """Peer sent a frame that is structurally valid but semantically wrong."""
