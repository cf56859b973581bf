class InsertBenchError(Exception):
    """Base class for all package errors."""


class FormatError(InsertBenchError):
    """A file or config document does not match its expected layout."""


class TruncatedFile(FormatError):
    pass


class ShapeMismatch(InsertBenchError):
    pass


class EmptyDataset(InsertBenchError):
    pass


class NonFiniteState(InsertBenchError):
    """Integration produced NaN/Inf, usually from mis-tuned gains."""


class OutOfPlane(InsertBenchError):
    """Tilted-camera capture requested while the peg tip is away from the surface."""


class GoalUnreachable(InsertBenchError):
    pass


class LocalizationFailed(InsertBenchError):
    pass
