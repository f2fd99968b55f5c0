"""Exception types raised across the package."""


class V2AError(Exception):
    """Base class for all package errors."""


class InvalidArgument(V2AError, ValueError):
    pass


class SampleRateMismatch(InvalidArgument):
    pass


class InsufficientLength(InvalidArgument):
    pass


class DivisionGuardError(V2AError, ArithmeticError):
    """Raised when a normalizing reference is identically zero."""


class InvalidConfiguration(V2AError, ValueError):
    pass


class IncompatibleCheckpoint(V2AError):
    pass


class ChecksumFailure(V2AError):
    pass


class ParseError(V2AError, ValueError):
    pass


class UnsupportedFormat(V2AError, ValueError):
    pass
