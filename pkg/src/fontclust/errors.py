"""Exception and warning types raised across the package."""


class FontError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(FontError, ValueError):
    pass


class TooFewPoints(FontError, ValueError):
    pass


class TooFewSequences(TooFewPoints):
    pass


class NonFinite(FontError, ValueError):
    pass


class DimensionMismatch(FontError, ValueError):
    pass


class InvalidState(FontError, ValueError):
    pass


class SubjectCountMismatch(FontError, ValueError):
    pass


class LengthMismatch(FontError, ValueError):
    pass


class ShapeMismatch(FontError, ValueError):
    pass


class TooFewModels(FontError, ValueError):
    pass


class AllDegenerate(FontError, RuntimeError):
    """Every distance representation collapsed to a single cluster."""


class EigenFailure(FontError, RuntimeError):
    pass


class TruthRequired(FontError, ValueError):
    pass


class ProtocolViolation(FontError, RuntimeError):
    """A federated message carried something other than parameters or labels."""


class OracleNotAllowed(FontError, PermissionError):
    """An oracle benchmark was requested without explicit opt-in."""


class DegenerateRep(UserWarning):
    """A distance representation has zero Frobenius norm."""


class DegenerateComponent(UserWarning):
    """A mixture component ended with posterior mass below 1/N."""


class EmptyClusterHandled(UserWarning):
    """K-means could not refill an empty cluster (all points coincide with centers)."""
