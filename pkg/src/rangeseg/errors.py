"""Exception hierarchy shared by all modules."""


class RangeSegError(Exception):
    """Base class for every error raised by this package."""


class DataError(RangeSegError, ValueError):
    """Input data is malformed or violates a file contract."""


class TruncatedFileError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


class IntensityRangeError(DataError):
    """Intensity outside [0, 1] (e.g. a 0-255 scaled file)."""


class BadMagicError(DataError):
    pass


class SizeMismatchError(DataError):
    pass


class DegenerateOriginError(DataError):
    pass


class ProvenanceMissingError(DataError):
    pass


class ShapeMismatchError(RangeSegError, ValueError):
    pass


class ConfigError(RangeSegError, ValueError):
    """Invalid configuration value, unknown key, or config/input mismatch."""


class StepOutOfRangeError(RangeSegError, ValueError):
    pass


class NonFiniteLossError(RangeSegError, FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class UndefinedIoUError(RangeSegError, ZeroDivisionError):
    pass


class EmptyBenchmarkError(RangeSegError, ValueError):
    pass
