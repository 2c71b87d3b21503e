"""Shared exception types."""


class ShapeError(ValueError):
    """An array has the wrong shape; the message names the offending axis."""


class FormatError(ValueError):
    """A serialized artifact (weight file, image, camera file) is malformed."""


class ConfigError(ValueError):
    """A pipeline configuration value is missing, unknown, or invalid."""
