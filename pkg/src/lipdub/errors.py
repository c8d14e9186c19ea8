"""Exception hierarchy shared by every stage."""


class LipdubError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LipdubError, ValueError):
    """A value violates one of its type invariants."""


class DegenerateConfigurationError(LipdubError, ValueError):
    """Geometry input has no unique solution (too few or collinear points, singular matrix)."""


class MissingLandmarkError(LipdubError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing landmark: {self.name}"


class BundleError(LipdubError, OSError):
    """Bundle on disk is missing files, corrupt, or does not match the manifest schema."""


class LeakViolation(LipdubError):
    """A synthesis request would let mouth information reach the model through a non-audio channel."""

    def __init__(self, channel: int, message: str):
        super().__init__(f"leak channel {channel}: {message}")
        self.channel = channel


class StageError(LipdubError):
    """Wraps an error raised inside a pipeline stage with its location."""

    def __init__(self, stage: str, cause: BaseException, index=None):
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"stage '{stage}'{where}: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause
