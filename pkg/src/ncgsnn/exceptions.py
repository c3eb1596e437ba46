class NCGError(Exception):
    """Base class for errors raised by ncgsnn."""


class ParameterError(NCGError, ValueError):
    """A parameter is outside its admissible range."""


class RangeError(NCGError, ValueError):
    """Input data lies outside the expected value range."""


class ConsistencyError(NCGError, ValueError):
    """Shapes, counts or indices disagree with each other."""


class FormatError(NCGError, ValueError):
    """A file does not follow its declared container format."""


class NumericError(NCGError, ArithmeticError):
    """A non-finite value reached a numeric update."""
