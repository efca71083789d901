"""Exception hierarchy shared across the package."""


class PathletsError(Exception):
    """Base class for all package errors."""


class DomainError(PathletsError):
    """Invalid spatial domain definition or out-of-domain unit reference."""


class ShapeError(PathletsError):
    """Matrix/vector dimensions inconsistent with the operation's contract."""


class ConfigError(PathletsError):
    """Invalid configuration or hyperparameter value."""


class InputError(PathletsError):
    """Empty or otherwise unusable input data."""


class TrainingError(PathletsError):
    """Training diverged (non-finite loss). Carries the last finite log rows."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class DenoiseError(PathletsError):
    """Observation cannot be explained by the dictionary (empty reconstruction)."""


class SynthError(PathletsError):
    """Synthetic corpus generation failed after exhausting retries."""
