"""Exception types shared across the package."""


class FxAttribError(Exception):
    """Base class for domain errors (CLI exit status 1)."""


class DataError(FxAttribError):
    """Malformed, missing or inconsistent input data."""


class ConfigError(FxAttribError):
    pass


class NumericError(FxAttribError):
    """Non-finite value or invalid numeric result."""


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FitError(FxAttribError):
    pass


class StageError(FxAttribError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
