"""Shared exception types."""


class PipelineError(Exception):
    """Base class for pipeline failures."""


class LoadError(PipelineError):
    """Raised when an input file cannot be parsed or fails validation."""


class ConfigError(PipelineError):
    """Raised when a configuration file is malformed or inconsistent."""
