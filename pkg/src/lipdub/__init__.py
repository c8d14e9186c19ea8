"""Deterministic building blocks for an audiovisual lip-dubbing pipeline."""
from .core import (
    AffineTransform,
    AudioClip,
    LandmarkSet,
    Utterance,
    UtteranceChunk,
)
from .errors import (
    BundleError,
    DegenerateConfigurationError,
    LeakViolation,
    LipdubError,
    MissingLandmarkError,
    StageError,
    ValidationError,
)

__version__ = "0.1.0"
