"""Exception types shared across the package.

Plain argument/shape misuse raises ValueError; these classes cover failures
that callers may want to catch selectively (bad configs, unusable data,
numerical breakdown).
"""


class LapsegenError(Exception):
    """Base class for package-specific failures."""


class ConfigError(LapsegenError):
    """Invalid, unknown-versioned or incomplete configuration; also raised
    when an optional provider (perceptual backbone, flow, segmentation) is
    requested but unavailable."""


class DataError(LapsegenError):
    """Dataset ingestion or file-format failures."""


class NumericsError(LapsegenError):
    """Non-finite losses, singular systems, non-PSD covariances."""
