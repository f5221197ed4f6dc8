"""Exception hierarchy.

Two families: ``ValidationError`` for bad inputs/configs (CLI exit 1) and
``IoError`` for unreadable or malformed files (CLI exit 2).
"""


class DiscLabelError(Exception):
    pass


class ValidationError(DiscLabelError, ValueError):
    pass


class ShapeError(ValidationError):
    pass


class InputTooSmall(ValidationError):
    pass


class TooFewSlices(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class EmptyEvaluation(ValidationError):
    pass


class DivergenceError(DiscLabelError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class IoError(DiscLabelError, OSError):
    pass


class FormatError(IoError):
    pass


class CorruptFile(IoError):
    pass


class CorruptCheckpoint(IoError):
    pass


class UnsupportedVersion(IoError):
    pass
