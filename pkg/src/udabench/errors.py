"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad configuration or precondition violation (CLI exit code 1)."""


class ConfigError(ValidationError):
    """Malformed or inconsistent configuration file / model setup."""


class DatasetIOError(RuntimeError):
    """Missing, ill-formed, or inconsistent on-disk dataset layout."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or incompatible inputs)."""
