"""Exception types raised across leaklab."""


class LeaklabError(Exception):
    """Base class for all leaklab errors."""


class NumericalFailure(LeaklabError):
    pass


class ShapeMismatch(LeaklabError, ValueError):
    pass


class InvalidSplit(LeaklabError, ValueError):
    pass


class DivergedTraining(LeaklabError):
    """Loss became NaN or infinite during training."""


class InvalidCurve(LeaklabError, ValueError):
    pass


class DimensionError(LeaklabError, ValueError):
    pass


class DuplicateCell(LeaklabError):
    """A result store already holds the same cell key with a different payload."""


class IncompleteGrid(UserWarning):
    """Heatmap grid has missing cells; they are drawn hatched."""
