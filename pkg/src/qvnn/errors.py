"""Exception types raised across the package."""


class QVNNError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DimensionError(QVNNError, ValueError):
    kind = "dimension"


class ContractError(QVNNError, ValueError):
    """A caller violated a documented precondition."""

    kind = "contract"


class StateError(QVNNError, RuntimeError):
    """An operation was called in the wrong lifecycle state (e.g. backward without forward)."""

    kind = "state"


class DataError(QVNNError, ValueError):
    kind = "data"


class FormatError(DataError):
    """Malformed dataset or model file."""

    kind = "format"


class WrongMagicError(FormatError):
    kind = "wrong-magic"


class TruncatedFileError(FormatError):
    kind = "truncated"


class UnsupportedVersionError(FormatError):
    kind = "unsupported-version"


class UnknownLayerTagError(FormatError):
    kind = "unknown-layer-tag"


class NumericalError(QVNNError, FloatingPointError):
    kind = "numerical"
