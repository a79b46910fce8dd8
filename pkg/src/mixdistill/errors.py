"""Exception hierarchy shared across the package.

CLI exit codes: InputError -> 2, TransportError (incl. ProtocolError) -> 3,
FormatError -> 4.
"""


class MixdistillError(Exception):
    """Base class for all package errors."""


class InputError(MixdistillError):
    """Caller passed invalid data or configuration."""


class FormatError(MixdistillError):
    """A file or payload does not match its documented format."""


class TransportError(MixdistillError):
    """A remote teacher could not be reached or kept failing."""


class ProtocolError(TransportError):
    """The remote teacher answered with a malformed response."""
