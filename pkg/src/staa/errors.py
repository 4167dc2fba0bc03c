"""Exception hierarchy shared by every subsystem."""


class StaaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StaaError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class EmptyInputError(StaaError, ValueError):
    pass


class NumericError(StaaError, ArithmeticError):
    """A non-finite value was produced or supplied."""


class RangeError(StaaError, ValueError):
    pass


class SpecError(StaaError, ValueError):
    """A scene or configuration description is internally inconsistent."""


class FormatError(StaaError, ValueError):
    """A file on disk does not follow the expected binary/text layout."""


class UnsupportedVersionError(FormatError):
    pass
