"""Exception taxonomy shared across the toolkit."""


class MaqamAsaError(Exception):
    """Base class for all domain errors raised by this package."""


class UnsupportedFormatError(MaqamAsaError):
    """Audio file is not 16/24-bit PCM WAV with 1-2 channels."""


class CorruptHeaderError(MaqamAsaError):
    """File does not parse as a RIFF/WAVE container."""


class NonFiniteError(MaqamAsaError):
    """Input contains NaN or infinity where finite values are required."""


class EmptyInputError(MaqamAsaError):
    """Operation requires a non-empty signal."""


class InvalidRangeError(MaqamAsaError):
    """Frequency or parameter range is inconsistent (e.g. fmin >= fmax)."""


class DegenerateStatsError(MaqamAsaError):
    """Standardization statistics have non-positive spread."""


class MalformedJsonError(MaqamAsaError):
    """Annotation payload is not valid JSON of the expected shape."""


class UnknownTypeError(MaqamAsaError):
    """Error type string is outside the three-value taxonomy."""


class InvertedSpanError(MaqamAsaError):
    """Annotation span has start >= end or negative start."""


class RateOutOfRangeError(MaqamAsaError):
    """Augmentation rate/magnitude is outside its allowed range."""


class EmptyHistogramError(MaqamAsaError):
    """Pitch histogram holds no voiced mass."""


class TooFewSongsError(MaqamAsaError):
    """Song-level split needs at least three songs."""


class MissingAnnotationError(MaqamAsaError):
    """A corpus clip has no annotation file."""


class InputTooShortError(MaqamAsaError):
    """Model input has fewer time frames than the CNN can pool."""


class VersionMismatchError(MaqamAsaError):
    """Checkpoint was written by an incompatible format version."""


class ConfigHashMismatchError(MaqamAsaError):
    """Checkpoint parameters belong to a different model configuration."""


class CorruptCheckpointError(MaqamAsaError):
    """Checkpoint file is truncated or fails structural validation."""


class EmptyDatasetError(MaqamAsaError):
    """Training requires a non-empty window manifest."""
