"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for wavediff failures."""


class DataError(PipelineError):
    """Input data violates a contract (bad prices, wrong lengths, ...)."""


class ConfigError(PipelineError):
    """Configuration is invalid or inconsistent."""


class DigestMismatchError(PipelineError):
    """An artifact was produced with different constants than the ones supplied."""
