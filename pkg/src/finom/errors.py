"""Exception types raised by the solver and its supporting machinery."""


class FinomError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FinomError):
    """Input data violates a structural requirement."""


class MeshError(ValidationError):
    """A mesh fails one of its invariants."""


class DuplicateNode(MeshError):
    """Two coordinates within one mesh are exactly equal."""


class UnsortedInput(MeshError):
    """Mesh coordinates are not in ascending order."""


class NonFiniteCoordinate(MeshError):
    """A mesh coordinate is NaN or infinite."""


class DimensionMismatch(ValidationError):
    """Array lengths or shapes are inconsistent with each other."""


class NonFiniteInput(ValidationError):
    """A numeric input carries a NaN or infinity."""


class InvalidEpsilon(FinomError):
    """The regularization parameter is not a positive finite real."""


class ParseError(FinomError):
    """A problem file could not be parsed."""


class ConfigError(FinomError):
    """A solver or CLI configuration value is out of range or inconsistent."""


class ZeroDenominator(FinomError):
    """A Sinkhorn scaling update hit an exactly-zero denominator.

    This happens when a kernel matvec underflows to zero in a row or
    column that still carries target mass, so the multiplicative update
    v / (K^T phi) is undefined.  Enabling log-domain stabilization is
    the usual fix.
    """


class NonFiniteIterate(FinomError):
    """A scaling vector overflowed to inf or degenerated to NaN.

    Raised when an iterate leaves the finite range, which for small
    regularization happens after enough unstabilized iterations.
    """


class SizeCapExceeded(FinomError):
    """A dense materialization was requested above the configured size cap."""
