"""Exception types shared across the pipeline."""


class TextForgeError(Exception):
    """Base class for all library errors."""


class MalformedPromptError(TextForgeError):
    """Prompt cannot be parsed, e.g. unbalanced quote characters."""


class TooManyKeywordsError(TextForgeError):
    """More quoted keywords than the layout decoder has query slots."""


class UnsupportedCharacterError(TextForgeError):
    """A character falls outside the 95-character alphabet."""


class ConfigurationError(TextForgeError):
    """Inconsistent model or pipeline configuration (shape mismatches etc.)."""


class UnrenderableBoxError(TextForgeError):
    """Box too small to hold any glyph at the minimum legible height."""


class DegenerateRegionError(TextForgeError):
    """Part-image generation requested with an empty region mask."""


class ScheduleRangeError(TextForgeError):
    """Timestep outside the noise schedule, or invalid beta range."""


class DivisionGuardError(TextForgeError):
    """Schedule coefficient is zero where a division is required."""


class DataError(TextForgeError):
    """Batch or annotation contents violate the training data contract."""


class UntrainedModelError(TextForgeError):
    """Sampling requested from a model that was never trained."""


class AdapterError(TextForgeError):
    """A pluggable external adapter (OCR, embeddings) failed."""
