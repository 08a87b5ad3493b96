"""Exception types raised across the package."""


class SiqkdError(Exception):
    """Base class for all package errors."""


class InvalidObservableError(SiqkdError, ValueError):
    pass


class InvalidStateError(SiqkdError, ValueError):
    pass


class InvalidRotationError(SiqkdError, ValueError):
    pass


class DegenerateSettingsError(SiqkdError, ValueError):
    """Settings for which the requested construction has no unit-norm solution."""


class DimensionError(SiqkdError, ValueError):
    """Bit strings or matrices with incompatible shapes."""


class SingularMatrixError(SiqkdError, ValueError):
    pass


class ConfigError(SiqkdError, ValueError):
    pass


class FramingError(SiqkdError):
    """Byte stream does not contain a well-formed frame."""


class ProtocolError(SiqkdError):
    """Well-formed frame arrived out of order, or with an unknown tag or bad contents."""
