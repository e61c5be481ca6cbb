"""Exception hierarchy for radpulse.

Every error raised on purpose by the library derives from ``RadPulseError``
(itself a ``ValueError``), so callers and the CLI can catch one type.
"""


class RadPulseError(ValueError):
    pass


# eigensolver
class InvalidPeclet(RadPulseError):
    pass


class ToleranceTooSmall(RadPulseError):
    pass


class IndexOutOfRange(RadPulseError, IndexError):
    pass


# series engine
class TimeTooSmall(RadPulseError):
    pass


class BasisMismatch(RadPulseError):
    pass


class InvalidParameters(RadPulseError):
    pass


# signatures
class OrderTooHigh(RadPulseError):
    pass


class RootNotBracketed(RadPulseError):
    pass


class DegenerateRatio(RadPulseError):
    pass


# kinetics
class GridMismatch(RadPulseError):
    pass


class NonPositiveBaseline(RadPulseError):
    pass


class WindowTooNarrow(RadPulseError):
    pass


class OutOfRange(RadPulseError):
    pass


class NotPureTransport(RadPulseError):
    pass


# oracles
class UnstableConfig(RadPulseError):
    pass


class TooManyCensored(RadPulseError):
    pass


class DisjointWindows(RadPulseError):
    pass


class CurveFormatError(RadPulseError):
    pass
