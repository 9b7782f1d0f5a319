"""Exception hierarchy shared by every module."""


class GtAgreeError(Exception):
    """Base class for all errors raised by the toolkit."""


class DimensionError(GtAgreeError, ValueError):
    """Arrays that must share a pixel grid do not."""


class EmptyAnnotationError(GtAgreeError, ValueError):
    """No pixel is marked where at least one is required."""


class ChannelError(GtAgreeError, KeyError):
    """A required colour channel is missing."""


class UndefinedCorrelationError(GtAgreeError, ValueError):
    """Pearson correlation is undefined for the given samples."""


class UndefinedRecallError(GtAgreeError, ValueError):
    """The ground truth has no positive pixel, so recall is undefined."""


class InputError(GtAgreeError, ValueError):
    """Malformed numeric input, e.g. non-finite detector responses."""
