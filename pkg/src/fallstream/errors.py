"""Exception types shared across the package."""


class ParseError(Exception):
    """Input is unreadable or the column mapping is clearly wrong."""


class UnknownActivity(ValueError):
    """Activity code is not in the vocabulary (and no extra mapping covers it)."""


class MissingLabel(ValueError):
    """A dataset-mode operation hit an unlabeled sample."""


class InsufficientData(ValueError):
    """Fewer input values than the operation requires."""


class SchemaMismatch(ValueError):
    """Feature schema versions or vector lengths disagree."""


class NotReady(RuntimeError):
    """A sliding buffer was queried before it filled."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class ArtifactError(Exception):
    """Model artifact is corrupt, truncated, or internally inconsistent."""
