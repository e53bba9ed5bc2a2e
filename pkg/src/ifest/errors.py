"""Exception types raised across the package.

The CLI maps these onto exit codes: input problems exit 2, shape/size
problems exit 3 and a degenerate confidence interval exits 4.
"""


class IfestError(Exception):
    """Base class for every error raised by ifest."""


class InputError(IfestError, ValueError):
    """Bad argument or malformed input (CLI exit code 2)."""


class ShapeError(IfestError, ValueError):
    """Sample sizes or dimensions are incompatible with the request (exit 3)."""


class BadBandwidth(InputError):
    pass


class OutOfDomain(InputError):
    pass


class EmptyGrid(InputError):
    pass


class GridTooLarge(InputError):
    pass


class BadExponents(InputError):
    pass


class BadAlpha(InputError):
    pass


class BadSpec(InputError):
    pass


class TooFewSamples(ShapeError):
    pass


class EmptySample(TooFewSamples):
    pass


class DimensionMismatch(ShapeError):
    pass


class IndexOutOfRange(IfestError, IndexError):
    pass


class DegenerateCase(IfestError):
    """Both influence functions vanish, so the normal approximation is void."""
