"""Exception types shared across the package."""


class VprError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VprError, ValueError):
    """Invalid configuration value."""


class DimensionError(VprError, ValueError):
    """Vector or matrix dimensions do not agree."""


class DatasetError(VprError, ValueError):
    """A dataset file is malformed.

    ``row`` is the 0-based data row where the problem was first seen, or
    ``None`` when the problem is not tied to a row (e.g. a bad header).
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ModelFormatError(VprError, ValueError):
    """A model file cannot be decoded, or a model violates its invariants."""


class ChecksumError(ModelFormatError):
    """Stored CRC32 does not match the payload (truncated or corrupt file)."""


class VersionError(ModelFormatError):
    """File format or statistic-catalogue version is not supported."""


class EmptyHistoryError(VprError, ValueError):
    """History-of-queries localization was asked for with no history."""


class TrainingError(VprError, ValueError):
    """The training set cannot produce a meaningful monitor."""
