"""Exception hierarchy shared across the package."""


class SegBenchError(Exception):
    """Base class for all package errors."""


class ParseError(SegBenchError):
    pass


class ConsistencyError(SegBenchError):
    pass


class FormatError(SegBenchError):
    pass


class ChannelError(SegBenchError):
    pass


class ConfigError(SegBenchError):
    pass


class DimensionMismatch(SegBenchError, ValueError):
    pass


class EmptyBoundary(SegBenchError, ValueError):
    pass


class EmptyInput(SegBenchError, ValueError):
    pass


class TooFewPatients(SegBenchError, ValueError):
    pass


class BadRatios(SegBenchError, ValueError):
    pass


class BadFraction(SegBenchError, ValueError):
    pass


class DivisibilityError(SegBenchError, ValueError):
    pass


class ShapeError(SegBenchError, ValueError):
    pass


class DivergenceError(SegBenchError, RuntimeError):
    pass


class UndefinedInput(SegBenchError, ValueError):
    pass


class DivisionByZero(SegBenchError, ZeroDivisionError):
    pass


class TooShort(SegBenchError, ValueError):
    pass


class DegenerateInput(SegBenchError, ValueError):
    pass


class MissingFraction(SegBenchError, KeyError):
    pass


class InsufficientData(SegBenchError, ValueError):
    pass
