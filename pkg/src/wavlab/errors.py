"""Shared exception types."""


class WavlabError(Exception):
    """Base class for all package errors."""


class ConfigError(WavlabError):
    """Invalid or inconsistent configuration."""


class ParseError(WavlabError):
    """Malformed persisted file.

    Carries the 1-based line number where parsing failed, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedVersionError(ParseError):
    """File declares a schema or version this code does not read."""


class InsufficientDataError(WavlabError):
    """A dataset partition cannot be filled from the available source data."""


class RevealError(WavlabError):
    """Illegal pool reveal (out of range or already revealed)."""


class PoolExhaustedError(WavlabError):
    """Exploration would need more unrevealed candidates than the pool holds."""


class TrainingDivergedError(WavlabError):
    """Training produced a non-finite loss."""


class MetricUndefinedError(WavlabError):
    """A metric has no defined value for the given inputs."""


class RankDeficientError(WavlabError):
    """Least-squares design matrix is rank deficient or too ill-conditioned."""


class TheoryInvariantError(WavlabError):
    """A theory-validation invariant (bound direction, monotonicity) failed."""
