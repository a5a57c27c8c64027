"""Exception hierarchy shared by every refit module."""


class RefitError(Exception):
    """Base class for all errors raised by refit."""


class InvalidParams(RefitError, ValueError):
    pass


class NotFound(RefitError, FileNotFoundError):
    pass


class UnsupportedFormat(RefitError, ValueError):
    pass


class CorruptFile(RefitError, ValueError):
    pass


class BadMagic(RefitError, ValueError):
    pass


class DimensionMismatch(RefitError, ValueError):
    pass


class RangeViolation(RefitError, ValueError):
    pass


class NonBinaryPixel(RefitError, ValueError):
    pass


class TooManyLabels(RefitError, ValueError):
    pass


class IoFailure(RefitError, OSError):
    pass


class KTooLarge(InvalidParams):
    pass


class EmptySpace(InvalidParams):
    pass


class MisalignedInputs(RefitError, ValueError):
    pass


class BadClassIndex(RefitError, IndexError):
    pass


class LabelOutOfRange(RefitError, ValueError):
    pass


class EmptyInput(RefitError, ValueError):
    pass
