"""Exception types shared across the pipeline."""


class Sparse3DError(Exception):
    """Base class for all library errors."""


class FormatError(Sparse3DError):
    """A file or byte stream does not match its declared layout."""


class MalformedBinary(FormatError):
    pass


class MalformedLabel(FormatError):
    pass


class MalformedCalib(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class ConfigInvalid(Sparse3DError, ValueError):
    pass


class EmptyScene(Sparse3DError, ValueError):
    pass


class EmptyInput(Sparse3DError, ValueError):
    pass


class DatasetEmpty(Sparse3DError, ValueError):
    pass


class CapabilityDenied(Sparse3DError, PermissionError):
    """Raised when hidden ground truth is requested without a valid token."""


class EmptyTrainingSet(Sparse3DError, ValueError):
    pass


class LayoutMismatch(Sparse3DError, ValueError):
    pass


class UnknownScene(Sparse3DError, KeyError):
    pass


class ExchangeTimeout(Sparse3DError, TimeoutError):
    pass


class ProtocolViolation(Sparse3DError):
    pass


class ResponderError(Sparse3DError):
    """The remote detector answered with an error payload."""
